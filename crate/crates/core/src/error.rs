use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: expected {expected} entries, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("arm {0} has no true CTR")]
    MissingCtr(u64),

    #[error("invalid arm {id}: {reason}")]
    InvalidArm { id: u64, reason: String },

    #[error("invalid visibility profile: {0}")]
    InvalidVisibility(String),

    #[error("invalid ranking: {0}")]
    InvalidRanking(String),

    #[error("every ranking is optimal, the minimum positive gap is undefined")]
    DegenerateInstance,

    #[error("arm {0} has zero effective impressions")]
    ZeroImpressions(usize),

    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{}:{line}: {reason}", path.display())]
    MalformedLog {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
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
