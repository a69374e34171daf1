//! Error types shared across the crate.

use thiserror::Error;

/// Errors surfaced by model construction, likelihood evaluation, estimation,
/// simulation, and file ingestion.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("all entries are masked; implied moments would be empty")]
    EmptyMoments,

    #[error("numerical failure in class {class}: {message}")]
    NumericalFailure { class: usize, message: String },

    #[error("numerical failure for individual {id} in class {class}: {message}")]
    IndividualFailure {
        id: String,
        class: usize,
        message: String,
    },

    #[error("estimation failed: {0}")]
    EstimationFailure(String),

    #[error("invalid simulation condition: {0}")]
    InvalidCondition(String),

    #[error("kappa is undefined: {0}")]
    UndefinedKappa(String),

    #[error("ingestion error for id {id} at line {line}: {message}")]
    Ingestion {
        id: String,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
