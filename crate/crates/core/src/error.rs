use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: &'static str,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("column {column} has zero variance")]
    ZeroVariance { column: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("response is constant; the penalty path is degenerate")]
    ConstantResponse,

    #[error("need at least {needed} rows, found {found}")]
    TooFewRows { needed: usize, found: usize },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("target group `{0}` has no rows")]
    EmptyTarget(String),

    #[error("matrix factorization failed: {0}")]
    Factorization(String),

    #[error("empty result table")]
    EmptyTable,

    #[error("malformed input in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error originates from user-supplied data rather than from
    /// the numerical routines.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::ZeroVariance { .. }
                | Error::ConstantResponse
                | Error::TooFewRows { .. }
                | Error::UnknownColumn(_)
                | Error::EmptyTarget(_)
                | Error::Parse { .. }
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::DimensionMismatch { .. }
        )
    }
}
