use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the dataset, estimation and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("empty cell (label {label:?}, nuisance {nuisance:?})")]
    EmptyCell { label: String, nuisance: String },

    #[error("dataset is not label-balanced for nuisance {nuisance:?}")]
    Unbalanced { nuisance: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("contribution table does not match dataset: {0}")]
    TableMismatch(String),

    #[error("majority label is tied for nuisance {nuisance:?}; discrimination is undefined")]
    ArgmaxTie { nuisance: String },

    #[error("discrimination group is empty: {0}")]
    EmptyGroup(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Serialization(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Serialization(err.to_string())
    }
}
