//! Audio ingestion and the DSP kernels shared by the feature extractors.

mod cepstrum;
mod mel;
mod pitch;
mod rasta;
mod spectrum;

use std::path::Path;

pub use cepstrum::real_cepstrum;
pub use mel::{hz_to_mel, mel_log_energies, mel_to_hz, MelFilterbank};
pub use pitch::{autocorrelation_pitch, PitchConfig, PitchEstimate};
pub use rasta::{rasta_filter, rasta_filter_band};
pub use spectrum::{hamming, magnitude_spectrum, next_pow2, Spectrum, SpectrumAnalyzer};

use crate::error::{invalid, CoreError, Result};

/// Floor applied before every logarithm of an energy or magnitude.
pub const LOG_FLOOR: f64 = 1e-10;

pub const DEFAULT_SAMPLE_RATE: u32 = 22_050;
pub const DEFAULT_WINDOW_MS: f64 = 200.0;
pub const DEFAULT_STEP_MS: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return invalid("sample rate must be positive");
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return invalid(format!("sample {i} is not finite"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Linear-interpolation resampling.
    pub fn resampled(&self, target_rate: u32) -> Result<Self> {
        if target_rate == 0 {
            return invalid("target sample rate must be positive");
        }
        if target_rate == self.sample_rate || self.samples.is_empty() {
            return Self::new(self.samples.clone(), target_rate);
        }
        let ratio = self.sample_rate as f64 / target_rate as f64;
        let n_out = ((self.samples.len() as f64) / ratio).round().max(1.0) as usize;
        let last = self.samples.len() - 1;
        let out = (0..n_out)
            .map(|i| {
                let pos = i as f64 * ratio;
                let lo = (pos.floor() as usize).min(last);
                let hi = (lo + 1).min(last);
                let frac = pos - lo as f64;
                self.samples[lo] * (1.0 - frac) + self.samples[hi] * frac
            })
            .collect();
        Self::new(out, target_rate)
    }
}

/// Reads a PCM WAV file, keeping channel 0. Integer samples are scaled by
/// `2^(bits-1)`; 32-bit float samples are taken as-is.
pub fn load_waveform(path: &Path, resample_to: Option<u32>) -> Result<Waveform> {
    let audio_err = |source| CoreError::Audio {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(audio_err)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24)) => {
            let scale = (1u32 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .step_by(channels)
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(audio_err)?
        }
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .step_by(channels)
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(audio_err)?,
        (fmt, bits) => {
            return Err(CoreError::UnsupportedEncoding(format!("{fmt:?} {bits}-bit")));
        }
    };
    if samples.is_empty() {
        return invalid(format!("{} contains no audio", path.display()));
    }
    let w = Waveform::new(samples, spec.sample_rate)?;
    match resample_to {
        Some(rate) => w.resampled(rate),
        None => Ok(w),
    }
}

/// Frames stored row-major, `n_frames × frame_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    data: Vec<f64>,
    frame_len: usize,
    step_len: usize,
    sample_rate: u32,
}

impl FrameSet {
    pub fn n_frames(&self) -> usize {
        self.data.len() / self.frame_len
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn step_len(&self) -> usize {
        self.step_len
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        &self.data[k * self.frame_len..(k + 1) * self.frame_len]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.frame_len)
    }
}

pub fn frame_len_for(window_ms: f64, sample_rate: u32) -> usize {
    (window_ms * sample_rate as f64 / 1000.0).round() as usize
}

/// Splits `w` into overlapping frames; the trailing partial frame is dropped.
pub fn frame_signal(w: &Waveform, window_ms: f64, step_ms: f64) -> Result<FrameSet> {
    if !(window_ms > 0.0 && step_ms > 0.0) {
        return invalid("window and step must be positive");
    }
    let frame_len = frame_len_for(window_ms, w.sample_rate);
    let step_len = frame_len_for(step_ms, w.sample_rate);
    if frame_len == 0 || step_len == 0 {
        return invalid("window or step shorter than one sample");
    }
    if w.len() < frame_len {
        return Err(CoreError::TooShort {
            needed: frame_len,
            have: w.len(),
        });
    }
    let n_frames = (w.len() - frame_len) / step_len + 1;
    let mut data = Vec::with_capacity(n_frames * frame_len);
    for k in 0..n_frames {
        data.extend_from_slice(&w.samples[k * step_len..k * step_len + frame_len]);
    }
    Ok(FrameSet {
        data,
        frame_len,
        step_len,
        sample_rate: w.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_second_gives_nine_frames() {
        let w = Waveform::new(vec![0.0; 22_050], 22_050).unwrap();
        let f = frame_signal(&w, 200.0, 100.0).unwrap();
        assert_eq!((f.n_frames(), f.frame_len()), (9, 4410));
    }

    #[test]
    fn exact_window_gives_one_frame() {
        let w = Waveform::new(vec![0.5; 4410], 22_050).unwrap();
        assert_eq!(frame_signal(&w, 200.0, 100.0).unwrap().n_frames(), 1);
        let short = Waveform::new(vec![0.5; 4409], 22_050).unwrap();
        assert!(matches!(frame_signal(&short, 200.0, 100.0), Err(CoreError::TooShort { .. })));
    }

    #[test]
    fn frame_count_matches_loop_oracle() {
        let n = (3.25 * 8000.0) as usize;
        let w = Waveform::new((0..n).map(|i| i as f64 / n as f64).collect(), 8000).unwrap();
        let f = frame_signal(&w, 200.0, 100.0).unwrap();
        let (len, step) = (1600, 800);
        let mut count = 0;
        let mut start = 0;
        while start + len <= n {
            assert_eq!(f.frame(count), &w.samples()[start..start + len]);
            count += 1;
            start += step;
        }
        assert_eq!(f.n_frames(), count);
    }

    #[test]
    fn rejects_bad_waveforms() {
        assert!(Waveform::new(vec![0.0], 0).is_err());
        assert!(Waveform::new(vec![f64::NAN], 8000).is_err());
    }

    #[test]
    fn resample_keeps_lines_linear() {
        let w = Waveform::new((0..1000).map(|i| i as f64 * 1e-3).collect(), 44_100).unwrap();
        let r = w.resampled(22_050).unwrap();
        assert_eq!(r.len(), 500);
        for (i, v) in r.samples().iter().enumerate() {
            assert!((v - 2.0 * i as f64 * 1e-3).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn frames_are_strided_copies(
            samples in proptest::collection::vec(-1.0f64..1.0, 200..2000),
            window in 5.0f64..50.0,
            step in 2.0f64..30.0,
        ) {
            let w = Waveform::new(samples, 8000).unwrap();
            if let Ok(f) = frame_signal(&w, window, step) {
                for k in 0..f.n_frames() {
                    let s = k * f.step_len();
                    prop_assert_eq!(f.frame(k), &w.samples()[s..s + f.frame_len()]);
                }
                prop_assert!(f.n_frames() * f.step_len() + f.frame_len() > w.len());
            }
        }
    }
}
