use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("no triples in {0}")]
    NoTriples(PathBuf),

    #[error("unknown entity `{0}`")]
    UnknownEntity(String),

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("no candidate chains for relation `{0}`")]
    NoCandidateChains(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("empty instance list")]
    EmptyInstances,

    #[error("no positive items: average precision undefined")]
    NoPositives,

    #[error("MAP undefined: every group lacks a positive")]
    MapUndefined,

    #[error("training set needs at least one positive and one negative instance")]
    DegenerateTrainingSet,

    #[error("empty vocabulary")]
    EmptyVocabulary,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible benchmark: {0}")]
    Infeasible(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 1,
            Error::NonFinite(_) => 3,
            _ => 2,
        }
    }
}
