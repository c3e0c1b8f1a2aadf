use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the decomposition, dataset and learning pipeline.
#[derive(Debug, Error)]
pub enum StvError {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid phantom geometry: {0}")]
    Geometry(String),

    #[error("mask does not fit: {0}")]
    MaskBounds(String),

    #[error("{path}: row {row}: {message}")]
    ManifestRow {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("degenerate truth vector: {0}")]
    DegenerateTruth(String),

    #[error("corrupt container: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, StvError>;

impl StvError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StvError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(expected: impl ToString, actual: impl ToString) -> Self {
        StvError::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
