use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid operation: {0}")]
    InvalidOp(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: invalid `{field}`: {message}")]
    Validation {
        line: u64,
        field: String,
        message: String,
    },

    #[error("unknown executor `{0}`")]
    UnknownExecutor(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("no predictor for {0}")]
    Routing(String),

    #[error("planning failed: {0}")]
    Planning(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
