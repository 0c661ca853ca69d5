use thiserror::Error;

use crate::triplet::TripletError;

pub type Result<T> = std::result::Result<T, PasteError>;

#[derive(Debug, Error)]
pub enum PasteError {
    #[error("invalid triplet: {0}")]
    Triplet(#[from] TripletError),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("annotation failed: {0}")]
    Annotation(String),

    #[error("sentence is not annotated with POS/DEP features")]
    Unannotated,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (parameter norms: {norms})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        norms: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
