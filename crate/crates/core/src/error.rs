use std::path::PathBuf;

use thiserror::Error;

use crate::randwalk::RelevanceScores;

pub type Result<T> = std::result::Result<T, Error>;

/// The last iterate of a fixed-point computation that ran out of iterations.
#[derive(Debug, Clone, PartialEq)]
pub enum LastIterate {
    Vector(Vec<f64>),
    Scores(Box<RelevanceScores>),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty document")]
    EmptyDocument,

    #[error("degenerate features")]
    DegenerateFeatures,

    #[error("missing features: {0}")]
    MissingFeatures(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown tag `{0}`")]
    UnknownTag(String),

    #[error("unknown image `{0}`")]
    UnknownImage(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
        last: LastIterate,
    },

    #[error("model format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn is_non_convergence(&self) -> bool {
        matches!(self, Error::NotConverged { .. })
    }
}
