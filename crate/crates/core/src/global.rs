//! Per-recording functionals over frame-level trajectories.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};
use crate::features::{FeatureCatalog, FrameFeatureMap, N_LLD, N_MEL, RASTA_FIRST};

pub const N_FUNCTIONALS: usize = 17;

pub const FUNCTIONAL_NAMES: [&str; N_FUNCTIONALS] = [
    "mean",
    "stddev",
    "skewness",
    "kurtosis",
    "min",
    "max",
    "range",
    "quartile1",
    "quartile2",
    "quartile3",
    "iqr1-3",
    "percentile1",
    "percentile99",
    "linregc1",
    "linregerrQ",
    "meanCrossingRate",
    "upleveltime_mean_std",
];

/// Linear interpolation between order statistics at rank `p·(n−1)`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// The 17 functionals, in [`FUNCTIONAL_NAMES`] order.
pub fn apply_functionals(x: &[f64]) -> Result<[f64; N_FUNCTIONALS]> {
    if x.is_empty() {
        return invalid("functionals need at least one frame");
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = if x.len() >= 2 { m2.sqrt() } else { 0.0 };
    let (mut skew, mut kurt) = (0.0, 0.0);
    if x.len() >= 3 && m2 > 0.0 {
        let m3 = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
        let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        skew = m3 / m2.powf(1.5);
        kurt = m4 / (m2 * m2);
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[x.len() - 1]);
    let (q1, q2, q3) = (percentile(&sorted, 0.25), percentile(&sorted, 0.5), percentile(&sorted, 0.75));

    let (mut slope, mut resid) = (0.0, 0.0);
    if x.len() >= 2 {
        let tm = (n - 1.0) / 2.0;
        let stt: f64 = (0..x.len()).map(|t| (t as f64 - tm).powi(2)).sum();
        slope = x.iter().enumerate().map(|(t, v)| (t as f64 - tm) * (v - mean)).sum::<f64>() / stt;
        let icpt = mean - slope * tm;
        resid = x
            .iter()
            .enumerate()
            .map(|(t, v)| (v - icpt - slope * t as f64).powi(2))
            .sum::<f64>()
            / n;
    }
    let crossings = if x.len() >= 2 {
        x.windows(2).filter(|w| (w[0] > mean) != (w[1] > mean)).count() as f64 / (n - 1.0)
    } else {
        0.0
    };
    let above = x.iter().filter(|&&v| v > mean + std).count() as f64 / n;
    Ok([
        mean,
        std,
        skew,
        kurt,
        min,
        max,
        max - min,
        q1,
        q2,
        q3,
        q3 - q1,
        percentile(&sorted, 0.01),
        percentile(&sorted, 0.99),
        slope,
        resid,
        crossings,
        above,
    ])
}

/// Global feature groups G1–G11.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GlobalGroup {
    G1,
    G2,
    G3,
    G4,
    G5,
    G6,
    G7,
    G8,
    G9,
    G10,
    G11,
}

impl GlobalGroup {
    pub const ALL: [GlobalGroup; 11] = [
        GlobalGroup::G1,
        GlobalGroup::G2,
        GlobalGroup::G3,
        GlobalGroup::G4,
        GlobalGroup::G5,
        GlobalGroup::G6,
        GlobalGroup::G7,
        GlobalGroup::G8,
        GlobalGroup::G9,
        GlobalGroup::G10,
        GlobalGroup::G11,
    ];

    pub fn label(self) -> &'static str {
        ["G1", "G2", "G3", "G4", "G5", "G6", "G7", "G8", "G9", "G10", "G11"][self as usize]
    }

    pub fn description(self) -> &'static str {
        match self {
            GlobalGroup::G1 => "spectral (auditory spectrum)",
            GlobalGroup::G2 => "spectral, RASTA filtered",
            GlobalGroup::G3 => "zero-crossing rate",
            GlobalGroup::G4 => "energy",
            GlobalGroup::G5 => "FFT band and shape",
            GlobalGroup::G6 => "RASTA bands",
            GlobalGroup::G7 => "MFCC",
            GlobalGroup::G8 => "fundamental frequency",
            GlobalGroup::G9 => "jitter",
            GlobalGroup::G10 => "shimmer",
            GlobalGroup::G11 => "harmonicity",
        }
    }

    /// Group of a frame-level descriptor by its name prefix.
    pub fn of_lld(id: usize) -> GlobalGroup {
        match id {
            6 => GlobalGroup::G1,
            7 => GlobalGroup::G2,
            9 | 69 => GlobalGroup::G3,
            8 | 68 | 70 | 71 => GlobalGroup::G4,
            36..=50 => GlobalGroup::G5,
            10..=35 => GlobalGroup::G6,
            51..=64 => GlobalGroup::G7,
            0 | 1 => GlobalGroup::G8,
            2 | 3 => GlobalGroup::G9,
            4 => GlobalGroup::G10,
            5 | 65..=67 => GlobalGroup::G11,
            _ => unreachable!("lld id out of range"),
        }
    }
}

/// Names and groups of every global dimension; identical across recordings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalSchema {
    pub catalog_hash: String,
    pub names: Vec<String>,
    pub groups: Vec<GlobalGroup>,
}

impl GlobalSchema {
    pub fn new(catalog: &FeatureCatalog) -> Self {
        let mut names = Vec::new();
        let mut groups = Vec::new();
        let sources = catalog
            .entries()
            .iter()
            .map(|e| (e.name.clone(), GlobalGroup::of_lld(e.id)))
            .chain((0..N_MEL).map(|b| {
                (
                    format!("{}_de", catalog.entries()[RASTA_FIRST + b].name),
                    GlobalGroup::G6,
                )
            }));
        for (lld, g) in sources {
            for f in FUNCTIONAL_NAMES {
                names.push(format!("{lld}__{f}"));
                groups.push(g);
            }
        }
        Self {
            catalog_hash: catalog.hash(),
            names,
            groups,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn group_counts(&self) -> Vec<(GlobalGroup, usize)> {
        GlobalGroup::ALL
            .iter()
            .map(|&g| (g, self.groups.iter().filter(|&&x| x == g).count()))
            .collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFeatureVector {
    pub values: Vec<f64>,
    pub schema: Arc<GlobalSchema>,
}

/// Applies the functionals to all 72 descriptors and to the first
/// differences of the 26 RASTA bands.
pub fn build_global_vector(map: &FrameFeatureMap, schema: &Arc<GlobalSchema>) -> Result<GlobalFeatureVector> {
    if map.catalog_hash() != schema.catalog_hash {
        return Err(CoreError::CatalogMismatch {
            expected: schema.catalog_hash.clone(),
            found: map.catalog_hash().to_string(),
        });
    }
    let mut values = Vec::with_capacity(schema.len());
    for c in 0..N_LLD {
        values.extend(apply_functionals(&map.column(c))?);
    }
    for b in 0..N_MEL {
        let col = map.column(RASTA_FIRST + b);
        let diff: Vec<f64> = if col.len() >= 2 {
            col.windows(2).map(|w| w[1] - w[0]).collect()
        } else {
            vec![0.0]
        };
        values.extend(apply_functionals(&diff)?);
    }
    if values.len() != schema.len() {
        return invalid("global vector length does not match schema");
    }
    Ok(GlobalFeatureVector {
        values,
        schema: Arc::clone(schema),
    })
}
