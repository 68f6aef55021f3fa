use crate::signal::Spectrum;

pub const N_SPECTRAL: usize = 15;

fn bark(f: f64) -> f64 {
    13.0 * (0.00076 * f).atan() + 3.5 * (f / 7500.0).powi(2).atan()
}

fn sharpness_weight(z: f64) -> f64 {
    if z < 15.8 {
        1.0
    } else {
        0.066 * (0.171 * z).exp()
    }
}

/// Spectral shape descriptors in catalog order: band energies 250–650 and
/// 1000–4000 Hz, roll-off 25/50/75/90 %, flux, centroid, entropy, variance,
/// skewness, kurtosis, slope, sharpness, harmonicity.
///
/// Moments treat `p_i = m_i / Σm` as a distribution over bin frequencies.
/// Sharpness is a bark-weighted loudness centroid (loudness ∝ power^0.23);
/// harmonicity is one minus the spectral flatness of the power spectrum.
pub fn spectral_shape_features(spec: &Spectrum, prev: Option<&Spectrum>) -> [f64; N_SPECTRAL] {
    let m = &spec.magnitudes;
    let freqs: Vec<f64> = (0..m.len()).map(|i| spec.frequency(i)).collect();
    let power: Vec<f64> = m.iter().map(|v| v * v).collect();
    let band = |lo: f64, hi: f64| -> f64 {
        freqs
            .iter()
            .zip(&power)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(_, p)| p)
            .sum()
    };
    let total_power: f64 = power.iter().sum();
    let rolloff = |q: f64| -> f64 {
        if total_power <= 0.0 {
            return 0.0;
        }
        let target = q * total_power;
        let mut acc = 0.0;
        for (f, p) in freqs.iter().zip(&power) {
            acc += p;
            if acc >= target {
                return *f;
            }
        }
        *freqs.last().unwrap()
    };
    let flux: f64 = match prev {
        Some(p) => m.iter().zip(&p.magnitudes).map(|(a, b)| (a - b).powi(2)).sum(),
        None => m.iter().map(|a| a * a).sum(),
    };

    let mass: f64 = m.iter().sum();
    let (mut centroid, mut entropy, mut var, mut skew, mut kurt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    if mass > 0.0 {
        let p: Vec<f64> = m.iter().map(|v| v / mass).collect();
        centroid = freqs.iter().zip(&p).map(|(f, w)| f * w).sum();
        entropy = -p.iter().filter(|&&w| w > 0.0).map(|w| w * w.ln()).sum::<f64>();
        let central = |k: i32| -> f64 { freqs.iter().zip(&p).map(|(f, w)| (f - centroid).powi(k) * w).sum() };
        var = central(2);
        if var > 1e-20 {
            skew = central(3) / var.powf(1.5);
            kurt = central(4) / (var * var);
        }
    }

    let n = m.len() as f64;
    let f_mean = freqs.iter().sum::<f64>() / n;
    let m_mean = mass / n;
    let sxx: f64 = freqs.iter().map(|f| (f - f_mean).powi(2)).sum();
    let slope = if sxx > 0.0 {
        freqs.iter().zip(m).map(|(f, v)| (f - f_mean) * (v - m_mean)).sum::<f64>() / sxx
    } else {
        0.0
    };

    let mut sharpness = 0.0;
    let loud: Vec<f64> = power.iter().map(|p| p.powf(0.23)).collect();
    let loud_total: f64 = loud.iter().sum();
    if loud_total > 0.0 {
        sharpness = 0.11
            * freqs
                .iter()
                .zip(&loud)
                .map(|(f, l)| {
                    let z = bark(*f);
                    l * sharpness_weight(z) * z
                })
                .sum::<f64>()
            / loud_total;
    }

    let harmonicity = if total_power > 0.0 {
        let floor = power.iter().cloned().fold(0.0, f64::max) * 1e-12;
        let log_mean = power.iter().map(|p| p.max(floor).ln()).sum::<f64>() / n;
        let flatness = (log_mean.exp() / (total_power / n)).min(1.0);
        1.0 - flatness
    } else {
        0.0
    };

    [
        band(250.0, 650.0),
        band(1000.0, 4000.0),
        rolloff(0.25),
        rolloff(0.50),
        rolloff(0.75),
        rolloff(0.90),
        flux,
        centroid,
        entropy,
        var,
        skew,
        kurt,
        slope,
        sharpness,
        harmonicity,
    ]
}
