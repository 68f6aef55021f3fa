//! Personalised sequential encoder: conv + recurrent Gaussian encoder,
//! reconstruction pretraining and a swap-consistent pairwise classifier.

mod checkpoint;
mod config;
mod data;
mod model;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, MAGIC, VERSION};
pub use config::{BiasMode, MergeMode, PseConfig};
pub use data::{
    normalize_frame_map, resample_rows, PatientTimeline, Standardizer, VisitRecord, VisitState, STD_GUARD,
};
pub use model::{sample_latent, LatentState, PreparedTimeline, PseModel};
pub use train::{
    build_pair_batch, build_pair_batch_with, draw_allocation, evaluate_pairs, fit_pse, pretrain_reconstruction,
    reconstruction_mse,
    train_pairwise_classifier, ClassifierEpoch, PairBatch, PairEvaluation, PairPrediction, PairRequest,
    PretrainEpoch, PseTrainingReport,
};
