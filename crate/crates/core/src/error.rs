use thiserror::Error;

/// Errors produced by the numerical routines and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("point count mismatch: header declares {declared}, found {found}")]
    PointCountMismatch { declared: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("problem too large for the exact solver ({rows}x{cols} > {limit} entries); use sinkhorn")]
    TooLarge {
        rows: usize,
        cols: usize,
        limit: usize,
    },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("optimization diverged at step {step}")]
    Diverged { step: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
