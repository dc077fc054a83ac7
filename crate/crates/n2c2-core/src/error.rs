//! Error type shared by every module in the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Normalization input summed to zero.
    #[error("all weights are zero; nothing to normalize")]
    AllZero,

    /// A weight passed to normalization was negative.
    #[error("negative weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },

    /// NaN or infinity where a finite value is required.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Vector or matrix dimension disagrees with the declared one.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    /// Malformed input line or document.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Train or dev record without a gold label.
    #[error("record {id} has no label but split {split} requires one")]
    MissingLabel { id: String, split: String },

    #[error("dataset contains no records")]
    EmptyDataset,

    /// A class has too few records to split into two halves.
    #[error("class {class} has {count} train record(s); at least 2 are required")]
    Degenerate { class: usize, count: usize },

    #[error("unknown record id {id}")]
    UnknownId { id: String },

    #[error("datastore is empty")]
    EmptyStore,

    #[error("neighbor set is empty")]
    EmptyNeighborSet,

    #[error("lambda must lie in [0, 1], got {value}")]
    InvalidLambda { value: f64 },

    #[error("empty list: {context}")]
    EmptyList { context: String },

    #[error("length mismatch in {context}: {left} vs {right}")]
    LengthMismatch {
        context: String,
        left: usize,
        right: usize,
    },

    /// File carries a format version this build does not understand.
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    /// Model file parses but its pieces disagree about shapes.
    #[error("model dimensions are inconsistent: {0}")]
    DimInconsistency(String),

    #[error("content-free distribution has a zero entry at class {class}")]
    ZeroContentFreeProb { class: usize },

    #[error("no predictions to evaluate")]
    EmptyPreds,

    #[error("dev set is empty")]
    EmptyDev,

    #[error("parameter/gradient shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("smoothing epsilon must lie in [0, 1), got {value}")]
    InvalidEpsilon { value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
