use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("weak supervision requires at least one labeled anomaly")]
    NoLabeledAnomalies,

    #[error("metric undefined: truth contains a single class ({n_pos} positives, {n_neg} negatives)")]
    SingleClass { n_pos: usize, n_neg: usize },

    #[error("cannot L2-normalize a zero-norm vector ({0})")]
    ZeroNorm(String),

    #[error("{path}: row {row}, column '{column}': {message}")]
    Csv {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: {message}")]
    CsvFormat { path: PathBuf, message: String },

    #[error("non-finite gradient in tensor '{0}'")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("snapshot format version {found} is not supported (expected {expected})")]
    SnapshotVersion { found: u32, expected: u32 },

    #[error("snapshot checksum mismatch")]
    SnapshotChecksum,

    #[error("snapshot is truncated")]
    SnapshotTruncated,

    #[error("corrupted snapshot: {0}")]
    SnapshotCorrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Failures caused by the optimisation itself rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteGradient(_) | Error::NonFiniteLoss { .. }
        )
    }

    pub(crate) fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            actual,
        }
    }
}
