use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller passed an argument outside an operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Operation invoked for the wrong test or with an unknown identifier.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    /// Scores and labels disagree on the set of bags.
    #[error("integrity error at bag {bag_id}: {reason}")]
    Integrity { bag_id: u64, reason: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
