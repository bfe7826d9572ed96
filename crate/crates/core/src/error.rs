//! Error type shared across the harness.

use thiserror::Error;

/// Everything that can go wrong between dataset loading and report writing.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix or batch had the wrong dimensions for the requested op.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A numeric argument violated the op's domain (negative variance,
    /// probability vector off the simplex, fraction outside [0, 1], ...).
    #[error("domain error in {context}: {detail}")]
    Domain { context: &'static str, detail: String },

    /// An estimator needed more samples than it was given.
    #[error("insufficient samples for {context}: need {needed}, got {got}")]
    InsufficientSamples {
        context: &'static str,
        needed: usize,
        got: usize,
    },

    /// An operation was called in the wrong lifecycle state,
    /// e.g. prediction before training.
    #[error("invalid state: {0}")]
    State(String),

    /// Input data failed schema validation (row/column counts, labels).
    #[error("schema error in {source_name} at row {row}: {detail}")]
    Schema {
        source_name: String,
        row: usize,
        detail: String,
    },

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at layer {layer}: {detail}")]
    Training { layer: usize, detail: String },

    /// Correlation is undefined for the given inputs (zero variance).
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// A checkpoint file was malformed or had an unsupported version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A configuration key or value was rejected.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(context: &'static str, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape {
            context,
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub fn domain(context: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            context,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
