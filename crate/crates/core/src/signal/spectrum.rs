use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::LOG_FLOOR;
use crate::error::{invalid, Result};

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// One-sided magnitude spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub magnitudes: Vec<f64>,
    pub bin_width_hz: f64,
}

impl Spectrum {
    pub fn n_fft(&self) -> usize {
        2 * (self.magnitudes.len() - 1)
    }

    pub fn sample_rate(&self) -> f64 {
        self.bin_width_hz * self.n_fft() as f64
    }

    pub fn frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_width_hz
    }

    pub fn power(&self) -> Vec<f64> {
        self.magnitudes.iter().map(|m| m * m).collect()
    }
}

/// Cached FFT plans and window for one frame length.
#[derive(Clone)]
pub struct SpectrumAnalyzer {
    frame_len: usize,
    n_fft: usize,
    sample_rate: u32,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectrumAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectrumAnalyzer")
            .field("frame_len", &self.frame_len)
            .field("n_fft", &self.n_fft)
            .field("sample_rate", &self.sample_rate)
            .finish()
    }
}

impl SpectrumAnalyzer {
    pub fn new(frame_len: usize, sample_rate: u32) -> Result<Self> {
        Self::with_n_fft(frame_len, next_pow2(frame_len), sample_rate)
    }

    pub fn with_n_fft(frame_len: usize, n_fft: usize, sample_rate: u32) -> Result<Self> {
        if frame_len == 0 {
            return invalid("empty frame");
        }
        if n_fft < frame_len || n_fft < 2 {
            return invalid(format!("n_fft {n_fft} shorter than frame length {frame_len}"));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            frame_len,
            n_fft,
            sample_rate,
            window: hamming(frame_len),
            fft: planner.plan_fft_forward(n_fft),
            ifft: planner.plan_fft_inverse(n_fft),
        })
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    fn check(&self, frame: &[f64]) -> Result<()> {
        if frame.len() != self.frame_len {
            return invalid(format!(
                "frame length {} does not match analyzer length {}",
                frame.len(),
                self.frame_len
            ));
        }
        Ok(())
    }

    /// Full complex transform of the windowed, zero-padded frame.
    fn transform(&self, frame: &[f64]) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.window)
            .map(|(x, w)| Complex::new(x * w, 0.0))
            .collect();
        buf.resize(self.n_fft, Complex::new(0.0, 0.0));
        self.fft.process(&mut buf);
        buf
    }

    pub fn spectrum(&self, frame: &[f64]) -> Result<Spectrum> {
        self.check(frame)?;
        let full = self.transform(frame);
        Ok(Spectrum {
            magnitudes: full[..=self.n_fft / 2].iter().map(|c| c.norm()).collect(),
            bin_width_hz: self.sample_rate as f64 / self.n_fft as f64,
        })
    }

    /// Inverse transform of the floored log magnitude over all `n_fft` bins.
    pub fn cepstrum(&self, frame: &[f64]) -> Result<Vec<f64>> {
        self.check(frame)?;
        let mut buf: Vec<Complex<f64>> = self
            .transform(frame)
            .iter()
            .map(|c| Complex::new(c.norm().max(LOG_FLOOR).ln(), 0.0))
            .collect();
        self.ifft.process(&mut buf);
        let n = self.n_fft as f64;
        Ok(buf.iter().map(|c| c.re / n).collect())
    }
}

/// Hamming-windowed one-sided magnitude spectrum of `frame`.
pub fn magnitude_spectrum(frame: &[f64], n_fft: usize, sample_rate: u32) -> Result<Spectrum> {
    SpectrumAnalyzer::with_n_fft(frame.len(), n_fft, sample_rate)?.spectrum(frame)
}
