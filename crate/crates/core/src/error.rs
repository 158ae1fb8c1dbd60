//! Error taxonomy shared by every module.
//!
//! The CLI maps these onto exit codes: configuration errors exit 2,
//! numerical faults exit 3, everything else exits 1.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or arguments (bad spec, unknown prompt id,
    /// out-of-range hyperparameter, enumeration cap exceeded).
    #[error("configuration error: {0}")]
    Config(String),

    /// API misuse: stepping a terminal state, stale backward cache,
    /// shape mismatches between values that were supposed to line up.
    #[error("usage error: {0}")]
    Usage(String),

    /// Non-finite values surfaced during training or inference.
    #[error("numerical fault: {0}")]
    Numerical(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
