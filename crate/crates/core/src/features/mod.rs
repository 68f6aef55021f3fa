//! Frame-level acoustic descriptors.

mod catalog;
mod extract;
mod map;
mod spectral;
mod voice;

pub use catalog::*;
pub use extract::{
    extract_lld_map, mfcc_from_log_mel, rhythm_features, DegenerateFlag, ExtractorOutput, ExtractorRegistry,
    LldExtractor, RecordingAnalysis, RhythmValues,
};
pub use map::FrameFeatureMap;
pub use spectral::{spectral_shape_features, N_SPECTRAL};
pub use voice::{cepstral_peak_prominence, log_hnr, perturbation_features, CppResult, Perturbation, HNR_CLAMP_DB};
