use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchConfig {
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub voicing_threshold: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            fmin_hz: 50.0,
            fmax_hz: 500.0,
            voicing_threshold: 0.45,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchEstimate {
    /// 0 when unvoiced.
    pub f0_hz: f64,
    /// Peak normalized autocorrelation clipped to `[0, 1]`.
    pub voicing: f64,
    /// Refined peak lag in samples (0 when no peak).
    pub lag: f64,
}

impl PitchEstimate {
    pub fn is_voiced(&self) -> bool {
        self.f0_hz > 0.0
    }

    pub fn period_s(&self) -> Option<f64> {
        self.is_voiced().then(|| 1.0 / self.f0_hz)
    }
}

impl PitchConfig {
    pub fn lag_range(&self, sample_rate: u32) -> (usize, usize) {
        let fs = sample_rate as f64;
        ((fs / self.fmax_hz).floor().max(1.0) as usize, (fs / self.fmin_hz).ceil() as usize)
    }
}

/// Normalized autocorrelation `Σ x[n]x[n+τ] / sqrt(E_head · E_tail)`.
fn nacf(x: &[f64], prefix: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let head = prefix[n - lag];
    let tail = prefix[n] - prefix[lag];
    let denom = (head * tail).sqrt();
    if denom <= 0.0 {
        return 0.0;
    }
    let num: f64 = x[..n - lag].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum();
    num / denom
}

/// Picks the first autocorrelation peak reaching 90% of the best peak in the
/// search range, which avoids locking onto period multiples.
pub fn autocorrelation_pitch(frame: &[f64], sample_rate: u32, cfg: &PitchConfig) -> Result<PitchEstimate> {
    let (min_lag, max_lag) = cfg.lag_range(sample_rate);
    if frame.len() <= max_lag + 1 {
        return Err(CoreError::TooShort {
            needed: max_lag + 2,
            have: frame.len(),
        });
    }
    let mut prefix = Vec::with_capacity(frame.len() + 1);
    prefix.push(0.0);
    for v in frame {
        prefix.push(prefix.last().unwrap() + v * v);
    }
    let lo = min_lag.saturating_sub(1).max(1);
    let hi = max_lag + 1;
    let r: Vec<f64> = (lo..=hi).map(|lag| nacf(frame, &prefix, lag)).collect();
    let at = |lag: usize| r[lag - lo];

    let peaks: Vec<usize> = (min_lag.max(lo + 1)..=max_lag)
        .filter(|&l| at(l) > at(l - 1) && at(l) >= at(l + 1))
        .collect();
    let unvoiced = PitchEstimate {
        f0_hz: 0.0,
        voicing: 0.0,
        lag: 0.0,
    };
    let Some(best) = peaks.iter().map(|&l| at(l)).reduce(f64::max) else {
        return Ok(unvoiced);
    };
    if best <= 0.0 {
        return Ok(unvoiced);
    }
    let lag = *peaks.iter().find(|&&l| at(l) >= 0.9 * best).unwrap();
    let (a, b, c) = (at(lag - 1), at(lag), at(lag + 1));
    let curv = a - 2.0 * b + c;
    let delta = if curv < 0.0 { (0.5 * (a - c) / curv).clamp(-0.5, 0.5) } else { 0.0 };
    let peak = b - 0.25 * (a - c) * delta;
    let voicing = peak.clamp(0.0, 1.0);
    let refined = lag as f64 + delta;
    Ok(PitchEstimate {
        f0_hz: if voicing >= cfg.voicing_threshold {
            sample_rate as f64 / refined
        } else {
            0.0
        },
        voicing,
        lag: refined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    fn tone(f: f64, sr: u32, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / sr as f64).sin()).collect()
    }

    #[test]
    fn tones_within_two_percent() {
        let cfg = PitchConfig::default();
        for f in [60.0, 73.0, 110.0, 220.0, 297.0, 350.0, 450.0] {
            let p = autocorrelation_pitch(&tone(f, 22_050, 4410), 22_050, &cfg).unwrap();
            assert!((p.f0_hz - f).abs() / f < 0.02, "{f} -> {}", p.f0_hz);
            assert!(p.voicing > 0.9);
        }
    }

    #[test]
    fn noise_is_unvoiced() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x: Vec<f64> = (0..4410).map(|_| StandardNormal.sample(&mut rng)).collect();
            let p = autocorrelation_pitch(&x, 22_050, &PitchConfig::default()).unwrap();
            assert!(p.voicing < 0.45);
            assert_eq!(p.f0_hz, 0.0);
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let p = autocorrelation_pitch(&[0.0; 4410], 22_050, &PitchConfig::default()).unwrap();
        assert_eq!((p.f0_hz, p.voicing), (0.0, 0.0));
    }

    #[test]
    fn short_frame_is_an_error() {
        assert!(autocorrelation_pitch(&[0.1; 400], 22_050, &PitchConfig::default()).is_err());
    }
}
