use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at line {line}: {msg}")]
    Malformed { line: usize, msg: String },

    #[error("dimension mismatch at line {line}: expected {expected}, got {got}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        got: usize,
    },

    #[error("duplicate id {id:?} at line {line}")]
    DuplicateId { line: usize, id: String },

    #[error("unknown role {role:?} at line {line}")]
    UnknownRole { line: usize, role: String },

    #[error("vector dimension mismatch: expected {expected}, got {got}")]
    VectorDimension { expected: usize, got: usize },

    #[error("no splittable dimension")]
    NoSplittableDimension,

    #[error("record {0:?} has no hidden vector")]
    MissingHidden(String),

    #[error("token id {id} is out of vocabulary (size {vocab_size})")]
    OutOfVocabulary { id: u32, vocab_size: usize },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error(
        "pretraining stopped at accuracy {accuracy:.4} after {steps} steps; \
         try a larger hidden_dim or more steps"
    )]
    PretrainDidNotConverge { accuracy: f64, steps: usize },

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
