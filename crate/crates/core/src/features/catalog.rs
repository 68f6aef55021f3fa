use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::signal::{PitchConfig, DEFAULT_STEP_MS, DEFAULT_WINDOW_MS};

pub const N_LLD: usize = 72;
pub const N_MEL: usize = 26;
pub const N_MFCC: usize = 14;

pub const F0: usize = 0;
pub const VOICING: usize = 1;
pub const JITTER_LOCAL: usize = 2;
pub const JITTER_DDP: usize = 3;
pub const SHIMMER_LOCAL: usize = 4;
pub const LOG_HNR: usize = 5;
pub const AUDSPEC_L1: usize = 6;
pub const AUDSPEC_RASTA_L1: usize = 7;
pub const RMS: usize = 8;
pub const ZCR: usize = 9;
pub const RASTA_FIRST: usize = 10;
pub const SPECTRAL_FIRST: usize = 36;
pub const MFCC_FIRST: usize = 51;
pub const CPP: usize = 65;
pub const CPP_BAND: usize = 66;
pub const CPP_HIGH: usize = 67;
pub const ENERGY: usize = 68;
pub const ZCR_RATE: usize = 69;
pub const SPL: usize = 70;
pub const ACTIVITY: usize = 71;

/// Frame-level grouping used for correlation analysis and group-restricted
/// models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LldGroup {
    RhythmEnergy,
    RhythmZcr,
    Mfcc,
    Quality,
    Rasta,
    F0,
}

impl LldGroup {
    pub const ALL: [LldGroup; 6] = [
        LldGroup::RhythmEnergy,
        LldGroup::RhythmZcr,
        LldGroup::Mfcc,
        LldGroup::Quality,
        LldGroup::Rasta,
        LldGroup::F0,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LldGroup::RhythmEnergy => "rhythm-energy",
            LldGroup::RhythmZcr => "rhythm-zcr",
            LldGroup::Mfcc => "mfcc",
            LldGroup::Quality => "quality",
            LldGroup::Rasta => "rasta",
            LldGroup::F0 => "f0",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == s)
    }

    pub fn of(id: usize) -> LldGroup {
        match id {
            0 | 1 => LldGroup::F0,
            2..=5 | 65..=67 => LldGroup::Quality,
            7 | 10..=35 => LldGroup::Rasta,
            51..=64 => LldGroup::Mfcc,
            9 | 38..=41 | 43..=47 | 49 | 69 => LldGroup::RhythmZcr,
            _ => LldGroup::RhythmEnergy,
        }
    }

    pub fn ids(self) -> Vec<usize> {
        (0..N_LLD).filter(|&i| LldGroup::of(i) == self).collect()
    }
}

/// Analysis parameters that change column values; part of the catalog hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionParams {
    pub window_ms: f64,
    pub step_ms: f64,
    pub mel_fmin_hz: f64,
    pub pitch_fmin_hz: f64,
    pub pitch_fmax_hz: f64,
    pub voicing_threshold: f64,
    pub activity_ratio: f64,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        let p = PitchConfig::default();
        Self {
            window_ms: DEFAULT_WINDOW_MS,
            step_ms: DEFAULT_STEP_MS,
            mel_fmin_hz: 20.0,
            pitch_fmin_hz: p.fmin_hz,
            pitch_fmax_hz: p.fmax_hz,
            voicing_threshold: p.voicing_threshold,
            activity_ratio: 0.1,
        }
    }
}

impl ExtractionParams {
    pub fn pitch(&self) -> PitchConfig {
        PitchConfig {
            fmin_hz: self.pitch_fmin_hz,
            fmax_hz: self.pitch_fmax_hz,
            voicing_threshold: self.voicing_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: usize,
    pub name: String,
    pub group: LldGroup,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCatalog {
    entries: Vec<CatalogEntry>,
    params: ExtractionParams,
}

const SPECTRAL_NAMES: [&str; 15] = [
    "pcm_fftMag_fband250-650_sma",
    "pcm_fftMag_fband1000-4000_sma",
    "pcm_fftMag_spectralRollOff25.0_sma",
    "pcm_fftMag_spectralRollOff50.0_sma",
    "pcm_fftMag_spectralRollOff75.0_sma",
    "pcm_fftMag_spectralRollOff90.0_sma",
    "pcm_fftMag_spectralFlux_sma",
    "pcm_fftMag_spectralCentroid_sma",
    "pcm_fftMag_spectralEntropy_sma",
    "pcm_fftMag_spectralVariance_sma",
    "pcm_fftMag_spectralSkewness_sma",
    "pcm_fftMag_spectralKurtosis_sma",
    "pcm_fftMag_spectralSlope_sma",
    "pcm_fftMag_psySharpness_sma",
    "pcm_fftMag_spectralHarmonicity_sma",
];

fn lld_name(id: usize) -> String {
    match id {
        0 => "F0final_sma".into(),
        1 => "voicingFinalUnclipped_sma".into(),
        2 => "jitterLocal_sma".into(),
        3 => "jitterDDP_sma".into(),
        4 => "shimmerLocal_sma".into(),
        5 => "logHNR_sma".into(),
        6 => "audspec_lengthL1norm_sma".into(),
        7 => "audspecRasta_lengthL1norm_sma".into(),
        8 => "pcm_RMSenergy_sma".into(),
        9 => "pcm_zcr_sma".into(),
        10..=35 => format!("audSpec_Rfilt_sma[{}]", id - RASTA_FIRST),
        36..=50 => SPECTRAL_NAMES[id - SPECTRAL_FIRST].into(),
        51..=64 => format!("mfcc_sma[{}]", id - MFCC_FIRST + 1),
        65 => "cpp".into(),
        66 => "cpp_band".into(),
        67 => "cpp_high".into(),
        68 => "energy".into(),
        69 => "zcr".into(),
        70 => "spl".into(),
        71 => "activity".into(),
        _ => unreachable!("lld id out of range"),
    }
}

impl Default for FeatureCatalog {
    fn default() -> Self {
        Self::new(ExtractionParams::default())
    }
}

impl FeatureCatalog {
    pub fn new(params: ExtractionParams) -> Self {
        let entries = (0..N_LLD)
            .map(|id| CatalogEntry {
                id,
                name: lld_name(id),
                group: LldGroup::of(id),
            })
            .collect();
        Self { entries, params }
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn params(&self) -> &ExtractionParams {
        &self.params
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// SHA-256 (hex) over the entries and the analysis parameters.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(format!("{}\t{}\t{}\n", e.id, e.name, e.group.name()).as_bytes());
        }
        h.update(serde_json::to_string(&self.params).expect("params serialize").as_bytes());
        hex::encode(h.finalize())
    }
}
