use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op} (first bad index {index})")]
    NonFinite { op: &'static str, index: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(AutodiffError::Shape {
        op,
        detail: detail.into(),
    })
}
