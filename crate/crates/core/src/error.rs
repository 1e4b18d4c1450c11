use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: cannot parse token {token:?}")]
    Parse {
        path: PathBuf,
        line: usize,
        token: String,
    },

    #[error("{kind} id {id} out of bounds (dimension {dim})")]
    OutOfBounds {
        kind: &'static str,
        id: usize,
        dim: usize,
    },

    #[error("no interactions")]
    Empty,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint config hash mismatch: checkpoint {checkpoint}, current {current}")]
    HashMismatch { checkpoint: String, current: String },

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("recommendation list for user {user} has {len} items, cutoff {cutoff} requested")]
    ShortList {
        user: usize,
        len: usize,
        cutoff: usize,
    },

    #[error("{path}: {source}")]
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
