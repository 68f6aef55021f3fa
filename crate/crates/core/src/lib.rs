//! Longitudinal intra-patient tracking from speech: acoustic descriptors,
//! statistical screening, a sequential variational encoder with a pairwise
//! classifier, and trajectory reconstruction.

pub mod benchmark;
pub mod cohort;
pub mod comparator;
pub mod error;
pub mod features;
pub mod fnn;
pub mod global;
mod math;
pub mod metrics;
pub mod pse;
pub mod screening;
pub mod signal;
pub mod trajectory;

pub use error::{CoreError, Result};
