use super::spectrum::{next_pow2, SpectrumAnalyzer};
use crate::error::Result;

/// Real cepstrum of a Hamming-windowed frame, length `n_fft`.
pub fn real_cepstrum(frame: &[f64], sample_rate: u32) -> Result<Vec<f64>> {
    SpectrumAnalyzer::with_n_fft(frame.len(), next_pow2(frame.len()).max(2), sample_rate)?.cepstrum(frame)
}
