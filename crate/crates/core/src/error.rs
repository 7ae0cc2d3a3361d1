use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty vector")]
    EmptyVector,

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite function value at parameter index {index}")]
    NonFiniteEvaluation { index: usize },

    #[error("gradient overflow in layer {layer}")]
    GradientOverflow { layer: String },

    #[error("non-finite ELBO term: {term}")]
    NonFiniteTerm { term: &'static str },

    #[error("non-finite loss at {phase} epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        phase: &'static str,
        epoch: usize,
        batch: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not enough data: {0}")]
    NotEnoughData(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric cell at row {row}, column {col} (`{column}`): {value:?}")]
    NonNumericCell {
        row: usize,
        col: usize,
        column: String,
        value: String,
    },

    #[error("feature mismatch: expected columns {expected:?}, found {found:?}")]
    FeatureMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    CheckpointVersion { expected: u32, found: u32 },
}

/// Coarse classification used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonFiniteEvaluation { .. }
            | Error::GradientOverflow { .. }
            | Error::NonFiniteTerm { .. }
            | Error::NonFiniteLoss { .. } => ErrorClass::Numerical,
            Error::InvalidArgument(_) | Error::CheckpointVersion { .. } => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
