use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("signal too short: need at least {needed} samples, have {have}")]
    TooShort { needed: usize, have: usize },
    #[error("cannot read audio {path}: {source}")]
    Audio {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("unsupported audio encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("catalog hash mismatch: expected {expected}, found {found}")]
    CatalogMismatch { expected: String, found: String },
    #[error("comparison graph is disconnected; components: {0:?}")]
    Disconnected(Vec<Vec<usize>>),
    #[error("no finite maximum-likelihood strengths: {0}")]
    NoFiniteMle(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("unknown {kind} `{name}`; available: {available:?}")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: Vec<String>,
    },
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] lipt_autodiff::AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(CoreError::Invalid(msg.into()))
}
