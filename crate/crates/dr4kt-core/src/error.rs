use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("tendency estimator is frozen; parameter updates are not permitted")]
    Frozen,

    #[error("metric undefined: scores contain a single label class")]
    SingleClass,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Open a file-flavoured io error with the offending path attached.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: config errors, data errors and
    /// runtime failures map to distinct codes.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Csv(_) | Error::SingleClass => 3,
            _ => 4,
        }
    }
}
