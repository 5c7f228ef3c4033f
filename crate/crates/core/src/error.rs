use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("token sequences differ between the two matrices")]
    TokenMismatch,

    #[error("exact enumeration needs {splits} splits, above the cap of {cap}")]
    EnumerationCap { splits: u128, cap: u128 },

    #[error("series {series}: timestamp {timestamp} is not after the last stored timestamp {last}")]
    Ordering {
        series: String,
        timestamp: String,
        last: String,
    },

    #[error("storage error at {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record in {path} line {line}: {detail}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn storage(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Storage {
            path: path.into(),
            source,
        }
    }

    /// Stable identifier, used by the CLI in error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::TokenMismatch => "token_mismatch",
            Error::EnumerationCap { .. } => "enumeration_cap",
            Error::Ordering { .. } => "ordering",
            Error::Storage { .. } => "storage",
            Error::Corrupt { .. } => "corrupt_record",
            Error::Config(_) => "config",
        }
    }
}
