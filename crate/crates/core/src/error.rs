//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DestripeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DestripeError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("shape mismatch: expected {expected} values, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("{count} non-finite voxel(s) in volume")]
    NonFinite { count: usize },

    #[error("invalid value for `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("spectrum is not Hermitian: imaginary/real ratio {ratio:.3e} exceeds {limit:.0e}")]
    HermitianViolation { ratio: f64, limit: f64 },

    #[error("node {node} has an empty neighbor set or zero total edge weight")]
    DegenerateNeighborhood { node: usize },

    #[error("non-finite value at iteration {iteration}, step `{step}`")]
    NonFiniteIntermediate {
        iteration: usize,
        step: &'static str,
    },

    #[error("non-finite gradient in {layer}")]
    NonFiniteGradient { layer: String },

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Validation,
    Numerical,
}

impl DestripeError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            DestripeError::MissingFile(path)
        } else {
            DestripeError::Io { path, source }
        }
    }

    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        DestripeError::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            DestripeError::Io { .. } | DestripeError::MissingFile(_) => ErrorKind::Io,
            DestripeError::HermitianViolation { .. }
            | DestripeError::NonFiniteIntermediate { .. }
            | DestripeError::NonFiniteGradient { .. }
            | DestripeError::NonFiniteLoss { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Validation,
        }
    }
}
