use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum DcmError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index {index} out of range for {bound} classes")]
    Index { index: usize, bound: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DcmError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        DcmError::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        DcmError::Config(msg.into())
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        DcmError::Format {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DcmError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = DcmError> = std::result::Result<T, E>;
