use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing preactivation bounds for layer {0}")]
    MissingBounds(usize),

    #[error("invalid bounds at layer {layer}, neuron {neuron}: lower {lower} > upper {upper}")]
    InvertedBounds {
        layer: usize,
        neuron: usize,
        lower: f64,
        upper: f64,
    },

    #[error("LP for layer {layer} neuron {neuron} ({sense}) ended with status {status:?}")]
    NeuronLp {
        layer: usize,
        neuron: usize,
        sense: &'static str,
        status: crate::lp::LpStatus,
    },

    #[error("LP ended with status {0:?}")]
    Lp(crate::lp::LpStatus),

    #[error("{unstable} unstable neurons exceed the oracle limit of {limit}")]
    OracleRefused { unstable: usize, limit: usize },

    #[error("input is misclassified: label {label}, predicted {predicted}")]
    Misclassified { label: usize, predicted: usize },

    #[error("malformed file {path}: {message}")]
    Malformed { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
