use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch ({context}): expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: expected {expected} components, found {found}")]
    InconsistentDimension {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("zero-norm vector for {0:?}")]
    ZeroVector(String),

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("negative mining needs at least 3 distinct candidate words, got {0}")]
    CandidatePool(usize),

    #[error("negative list for pair {0} contains the pair itself")]
    SelfNegative(usize),

    #[error("neighbourhood size {k} exceeds candidate count {available}")]
    NeighbourhoodTooLarge { k: usize, available: usize },

    #[error("dictionary induction produced no mutual pairs")]
    EmptyDictionary,

    #[error("gradient cache does not match the network: {0}")]
    StaleCache(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }
}
