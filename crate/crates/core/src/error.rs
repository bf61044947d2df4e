use std::path::PathBuf;

use thiserror::Error;

use crate::numerics::NumericsError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("token id {id} is outside the vocabulary (size {vocab_size})")]
    InvalidToken { id: usize, vocab_size: usize },

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("language model direction mismatch: expected {expected}, found {found}")]
    DirectionMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("vocabulary mismatch between models or files")]
    VocabularyMismatch,

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint version mismatch: found {found:?}")]
    VersionMismatch { found: String },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("non-finite gradient in energy term {term}")]
    NonFiniteGradient { term: usize },

    #[error("task kind mismatch: expected {expected}, found {found}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{0}")]
    Data(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures caused by arithmetic rather than by inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerics(_) | Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. }
        )
    }
}
