use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("line {line}: rating out of range ({value})")]
    RatingOutOfRange { line: usize, value: i64 },

    #[error("line {line}: duplicate rating for user {user} item {item}")]
    DuplicateRating { line: usize, user: u32, item: u32 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("user {user} has positive interactions but no negatives to pair with")]
    MissingNegatives { user: u32 },

    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: u64 },

    #[error("dataset kind {found} does not match model kind {expected}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("operation not supported: {0}")]
    Unsupported(String),

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("refused: {0}")]
    Refused(String),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
