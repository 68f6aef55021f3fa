use super::spectrum::Spectrum;
use super::LOG_FLOOR;
use crate::error::{invalid, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular, unit-peak filters equally spaced on the mel scale, applied to
/// the power spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// Per band: first bin and weights from there.
    bands: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
    n_bins: usize,
}

impl MelFilterbank {
    pub fn new(n_bands: usize, n_fft: usize, sample_rate: f64, fmin: f64, fmax: f64) -> Result<Self> {
        if n_bands == 0 {
            return invalid("need at least one mel band");
        }
        if !(fmax > fmin) || fmin < 0.0 {
            return invalid(format!("mel range must satisfy 0 <= fmin < fmax, got {fmin}..{fmax}"));
        }
        let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..n_bands + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_bands + 1) as f64))
            .collect();
        let n_bins = n_fft / 2 + 1;
        let bin_hz = sample_rate / n_fft as f64;
        let bands = (0..n_bands)
            .map(|b| {
                let (l, c, r) = (edges[b], edges[b + 1], edges[b + 2]);
                let weights: Vec<(usize, f64)> = (0..n_bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f > l && f <= c {
                            (f - l) / (c - l)
                        } else if f > c && f < r {
                            (r - f) / (r - c)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                match weights.first() {
                    Some(&(start, _)) => (start, weights.iter().map(|&(_, w)| w).collect()),
                    None => (0, Vec::new()),
                }
            })
            .collect();
        Ok(Self {
            bands,
            centers_hz: edges[1..=n_bands].to_vec(),
            n_bins,
        })
    }

    pub fn for_spectrum(spec: &Spectrum, n_bands: usize, fmin: f64, fmax: f64) -> Result<Self> {
        Self::new(n_bands, spec.n_fft(), spec.sample_rate(), fmin, fmax)
    }

    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Filter weight of `band` at `bin`.
    pub fn weight(&self, band: usize, bin: usize) -> f64 {
        let (start, w) = &self.bands[band];
        if bin < *start {
            return 0.0;
        }
        w.get(bin - start).copied().unwrap_or(0.0)
    }

    /// Linear band energies of a spectrum's power.
    pub fn energies(&self, spec: &Spectrum) -> Vec<f64> {
        debug_assert_eq!(spec.magnitudes.len(), self.n_bins);
        self.bands
            .iter()
            .map(|(start, w)| {
                w.iter()
                    .zip(&spec.magnitudes[*start..])
                    .map(|(wv, m)| wv * m * m)
                    .sum()
            })
            .collect()
    }

    pub fn log_energies(&self, spec: &Spectrum) -> Vec<f64> {
        self.energies(spec).into_iter().map(|e| e.max(LOG_FLOOR).ln()).collect()
    }
}

/// Natural-log mel band energies of one spectrum.
pub fn mel_log_energies(spec: &Spectrum, n_bands: usize, fmin: f64, fmax: f64) -> Result<Vec<f64>> {
    Ok(MelFilterbank::for_spectrum(spec, n_bands, fmin, fmax)?.log_energies(spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::magnitude_spectrum;
    use std::f64::consts::PI;

    #[test]
    fn zero_spectrum_at_floor() {
        let spec = Spectrum {
            magnitudes: vec![0.0; 257],
            bin_width_hz: 8000.0 / 512.0,
        };
        let e = mel_log_energies(&spec, 26, 20.0, 4000.0).unwrap();
        assert_eq!(e.len(), 26);
        assert!(e.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn tone_at_band_centre_wins_that_band() {
        let (sr, n) = (22_050u32, 4410usize);
        let fb = MelFilterbank::new(26, 8192, sr as f64, 20.0, sr as f64 / 2.0).unwrap();
        for k in [2usize, 9, 17, 24] {
            let f = fb.centers_hz()[k];
            let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * f * i as f64 / sr as f64).sin()).collect();
            let spec = magnitude_spectrum(&x, 8192, sr).unwrap();
            let e = fb.log_energies(&spec);
            // oracle: recompute the band sums from the weights directly
            let p = spec.power();
            let direct: Vec<f64> = (0..26)
                .map(|b| (0..p.len()).map(|i| fb.weight(b, i) * p[i]).sum::<f64>().max(LOG_FLOOR).ln())
                .collect();
            for (a, b) in e.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-9);
            }
            let best = (0..26).max_by(|&a, &b| e[a].total_cmp(&e[b])).unwrap();
            assert_eq!(best, k);
            assert!(e.iter().enumerate().all(|(i, &v)| i == k || v < e[k]));
        }
    }

    #[test]
    fn weights_are_unit_peak_triangles() {
        let fb = MelFilterbank::new(10, 4096, 16_000.0, 20.0, 8000.0).unwrap();
        for b in 0..10 {
            let max = (0..2049).map(|i| fb.weight(b, i)).fold(0.0, f64::max);
            assert!(max <= 1.0 && max > 0.9);
        }
    }

    #[test]
    fn rejects_inverted_range() {
        assert!(MelFilterbank::new(26, 512, 8000.0, 4000.0, 4000.0).is_err());
    }
}
