use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("alpha must lie in [0.5, 1], got {0}")]
    AlphaOutOfRange(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("token {token} at position {position} is outside the vocabulary of size {vocab}")]
    TokenOutOfRange { token: u32, position: usize, vocab: usize },

    #[error("non-finite value in {what}{}{}", .layer.map(|l| format!(" at layer {l}")).unwrap_or_default(), .step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { what: String, layer: Option<usize>, step: Option<u64> },

    #[error("checkpoint {}: {reason}", .path.display())]
    Checkpoint { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn non_finite(what: impl Into<String>) -> Self {
        Error::NonFinite { what: what.into(), layer: None, step: None }
    }

    /// True for failures caused by the numbers themselves rather than inputs or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Checkpoint { .. } | Error::Csv(_))
    }
}
