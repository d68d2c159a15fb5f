use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PattError>;

#[derive(Debug, Error)]
pub enum PattError {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("class {class} is out of range for {classes} classes")]
    UnknownClass { class: usize, classes: usize },

    #[error("class {class} has zero prior")]
    ZeroPrior { class: usize },

    #[error("class {class} has no samples and no previous statistics")]
    MissingClass { class: usize },

    #[error("degenerate embedding: pre-normalization norm {norm:e}")]
    DegenerateEmbedding { norm: f64 },

    #[error("non-finite value in {term}")]
    NonFinite { term: String },

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PattError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        PattError::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PattError::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(PattError::DimensionMismatch { expected, got });
    }
    Ok(())
}
