use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch { context: &'static str, expected: usize, actual: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("round {round}: {source}")]
    AtRound {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed trace: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch { context, expected, actual }
    }

    pub(crate) fn at_round(self, round: usize) -> Self {
        Error::AtRound { round, source: Box::new(self) }
    }

    /// Unwraps round annotations down to the originating error.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtRound { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures caused by the numerical state of a model rather than by its inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self.root(), Error::NotPositiveDefinite(_) | Error::Numerical(_))
    }
}
