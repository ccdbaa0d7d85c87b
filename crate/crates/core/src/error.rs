use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix is not square: {0} x {1}")]
    NotSquare(usize, usize),

    #[error("node {0} has no edges and self-loop insertion is disabled")]
    IsolatedNode(usize),

    #[error("zero degree node at index {0}")]
    ZeroDegree(usize),

    #[error("row {row} is not stochastic (sum = {sum})")]
    NotRowStochastic { row: usize, sum: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{op} is undefined for input {value}")]
    Domain { op: &'static str, value: f64 },

    #[error("gradient root must be a scalar, got shape {0:?}")]
    NonScalarRoot((usize, usize)),

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("unknown measure {name:?}; valid measures: {valid}")]
    UnknownMeasure { name: String, valid: String },

    #[error("io error on {path}: {source}")]
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

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
