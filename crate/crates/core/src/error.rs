//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate quad: {0}")]
    DegenerateQuad(String),

    #[error("covariance is not symmetric positive-definite: {0}")]
    NonSpd(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("annotation parse error at line {line}: {msg}")]
    AnnotationParse { line: usize, msg: String },

    #[error("unknown category '{name}' at line {line}")]
    UnknownCategory { name: String, line: usize },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("non-finite gradient at step {step} in {tensor}")]
    NonFiniteGradient { step: usize, tensor: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
