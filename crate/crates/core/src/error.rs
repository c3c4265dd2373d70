//! Error type shared by every module of the simulator.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: String,
        expected: String,
        found: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("loss is not finite at perturbed coordinate {coordinate} ({segment}[{offset}])")]
    NonFiniteLoss {
        coordinate: usize,
        segment: String,
        offset: usize,
    },

    #[error("non-finite gradient term {term}")]
    NonFiniteGradient { term: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class index {index} out of range for {classes} classes")]
    ClassIndex { index: usize, classes: usize },

    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),

    #[error("IDX parse error in {path} at byte offset {offset}: {reason}")]
    Idx {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("infeasible partition: {0}")]
    Partition(String),

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("client {id}: {source}")]
    Client {
        id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("metrics schema mismatch in {path}: {reason}")]
    Schema { path: PathBuf, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Debug,
        found: impl std::fmt::Debug,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: format!("{expected:?}"),
            found: format!("{found:?}"),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
