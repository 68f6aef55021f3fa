use crate::error::{CoreError, Result};
use crate::signal::SpectrumAnalyzer;

pub const HNR_CLAMP_DB: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Perturbation {
    pub jitter_local: f64,
    pub jitter_ddp: f64,
    pub shimmer_local: f64,
    /// Set when a value could not be computed and was reported as 0.
    pub jitter_local_undefined: bool,
    pub jitter_ddp_undefined: bool,
    pub shimmer_local_undefined: bool,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn local(x: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let m = mean(x);
    if m <= 0.0 {
        return None;
    }
    let d: f64 = x.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (x.len() - 1) as f64;
    Some(d / m)
}

fn ddp(x: &[f64]) -> Option<f64> {
    if x.len() < 3 {
        return None;
    }
    let m = mean(x);
    if m <= 0.0 {
        return None;
    }
    let d: f64 = x
        .windows(3)
        .map(|w| ((w[2] - w[1]) - (w[1] - w[0])).abs())
        .sum::<f64>()
        / (x.len() - 2) as f64;
    Some(d / m)
}

/// Cycle-to-cycle perturbation of a period sequence (seconds) and the
/// matching amplitude sequence.
pub fn perturbation_features(periods: &[f64], amplitudes: &[f64]) -> Perturbation {
    let jl = local(periods);
    let jd = ddp(periods);
    let sl = local(amplitudes);
    Perturbation {
        jitter_local: jl.unwrap_or(0.0),
        jitter_ddp: jd.unwrap_or(0.0),
        shimmer_local: sl.unwrap_or(0.0),
        jitter_local_undefined: jl.is_none(),
        jitter_ddp_undefined: jd.is_none(),
        shimmer_local_undefined: sl.is_none(),
    }
}

/// `10·log10(r/(1−r))` clamped to ±100 dB; unvoiced frames give −100.
pub fn log_hnr(r: f64, voiced: bool) -> f64 {
    if !voiced || r <= 0.0 {
        return -HNR_CLAMP_DB;
    }
    if r >= 1.0 {
        return HNR_CLAMP_DB;
    }
    (10.0 * (r / (1.0 - r)).log10()).clamp(-HNR_CLAMP_DB, HNR_CLAMP_DB)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CppResult {
    pub cpp: f64,
    pub cpp_band: f64,
    pub cpp_high: f64,
    /// Quefrency (seconds) of the full-range peak.
    pub peak_quefrency_s: f64,
}

const DB_PER_NEPER: f64 = 20.0 / std::f64::consts::LN_10;

/// Peak prominence over the quefrency window of `[fmin, fmax]` Hz; returns
/// (prominence in dB, peak index).
fn prominence(c: &[f64], sample_rate: f64, fmin: f64, fmax: f64) -> (f64, usize) {
    let lo = (sample_rate / fmax).floor() as usize;
    let hi = (sample_rate / fmin).ceil() as usize;
    let q: Vec<f64> = (lo..=hi).map(|i| i as f64).collect();
    let v = &c[lo..=hi];
    let n = q.len() as f64;
    let (qm, vm) = (q.iter().sum::<f64>() / n, v.iter().sum::<f64>() / n);
    let sxx: f64 = q.iter().map(|x| (x - qm).powi(2)).sum();
    let slope = q.iter().zip(v).map(|(x, y)| (x - qm) * (y - vm)).sum::<f64>() / sxx;
    let icpt = vm - slope * qm;
    let (k, peak) = v
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bk, bv), (k, &x)| if x > bv { (k, x) } else { (bk, bv) });
    let trend = icpt + slope * q[k];
    ((peak - trend) * DB_PER_NEPER, lo + k)
}

/// Cepstral peak prominence over 50–500 Hz, 50–160 Hz and 160–500 Hz.
pub fn cepstral_peak_prominence(frame: &[f64], analyzer: &SpectrumAnalyzer) -> Result<CppResult> {
    let sr = analyzer.sample_rate() as f64;
    let max_q = (sr / 50.0).ceil() as usize;
    if max_q >= analyzer.n_fft() / 2 {
        return Err(CoreError::TooShort {
            needed: 2 * max_q + 1,
            have: analyzer.n_fft(),
        });
    }
    let c = analyzer.cepstrum(frame)?;
    let (cpp, peak) = prominence(&c, sr, 50.0, 500.0);
    let (cpp_band, _) = prominence(&c, sr, 50.0, 160.0);
    let (cpp_high, _) = prominence(&c, sr, 160.0, 500.0);
    Ok(CppResult {
        cpp,
        cpp_band,
        cpp_high,
        peak_quefrency_s: peak as f64 / sr,
    })
}
