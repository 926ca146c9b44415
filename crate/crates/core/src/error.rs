use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the rewriting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric error: non-finite value produced by {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("incompatible checkpoint version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },

    #[error("vocab mismatch: checkpoint expects {expected}, got {found}")]
    VocabMismatch { expected: String, found: String },

    #[error("embedding tables differ from the ones this model was trained against")]
    EmbeddingMismatch,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, err: &serde_json::Error) -> Self {
        Error::Parse {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Dimension(format!($($arg)*))
    };
}

macro_rules! contract {
    ($($arg:tt)*) => {
        $crate::error::Error::Contract(format!($($arg)*))
    };
}

pub(crate) use contract;
pub(crate) use dim_err;
