use std::io;

use thiserror::Error;

pub type Result<T, E = EgcError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EgcError {
    #[error("node index {index} out of range for graph with {num_nodes} nodes")]
    IndexOutOfRange { index: usize, num_nodes: usize },

    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: String,
        actual: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("graph has no edge coefficients; symmetric normalization requires them")]
    MissingCoefficients,

    #[error("graph must contain a self-loop on every node")]
    MissingSelfLoops,

    #[error("row {0} has an empty neighborhood")]
    EmptyRow(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("malformed {kind} file: {msg}")]
    Format { kind: &'static str, msg: String },

    #[error("training diverged at step {step} (last finite loss at step {last_finite:?})")]
    Diverged {
        step: usize,
        last_finite: Option<usize>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl EgcError {
    pub(crate) fn shape(
        what: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        EgcError::Shape {
            what,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        EgcError::Config(msg.into())
    }
}
