use std::path::PathBuf;

use thiserror::Error;

use crate::gradcore::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("document `{0}` has no passages")]
    EmptyDocument(String),
    #[error("document `{id}`: {reason}")]
    InvalidDocument { id: String, reason: String },
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("unknown document id `{0}`")]
    UnknownDocument(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
