use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("cannot encode symbol {symbol:?} at index {index}: {reason}")]
    Encoding {
        symbol: String,
        index: usize,
        reason: String,
    },

    #[error("sequence too long: {len} tokens exceed the limit of {limit} by {}", len - limit)]
    Length { len: usize, limit: usize },

    #[error("requested {requested} components but the data only supports k <= {attainable}")]
    DegenerateRank { requested: usize, attainable: usize },

    #[error("non-finite values in {tensor}")]
    Numerical { tensor: String },

    #[error("malformed sequence: {0}")]
    Parse(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("not enough samples: {0}")]
    Allocation(String),

    #[error("batch has no positions contributing to the loss")]
    DegenerateBatch,

    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
