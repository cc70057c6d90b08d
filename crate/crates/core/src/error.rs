use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic: expected \"EMB1\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported EMB1 version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("truncated header: {0} bytes")]
    TruncatedHeader(usize),
    #[error("payload size mismatch: header declares {expected} bytes, file holds {actual}")]
    PayloadSizeMismatch { expected: u64, actual: u64 },
    #[error("non-finite value at ({row}, {col})")]
    NonFiniteValue { row: usize, col: usize },
    #[error("embedding dimension must be at least 1")]
    ZeroDim,
    #[error("value count {found} does not match {rows}x{dim}")]
    ShapeMismatch { rows: usize, dim: usize, found: usize },
    #[error("row {0} has (near) zero norm")]
    ZeroNormRow(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embeddings are not unit-normalized")]
    NotNormalized,
    #[error("prompt bank has {classes} class embeddings but {names} names")]
    NameCountMismatch { classes: usize, names: usize },
    #[error("prompt bank needs at least one class")]
    NoClasses,
    #[error("context embedding must have exactly one row, found {0}")]
    ContextRows(usize),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("label {label} at index {index} outside 0..={max}")]
    LabelOutOfRange { index: usize, label: u32, max: u32 },
    #[error("class {0} has no training samples")]
    EmptyClass(u32),
    #[error("covariance is singular after shrinkage")]
    SingularAfterShrinkage,
    #[error("invalid shrinkage {0}")]
    InvalidShrinkage(f64),
    #[error("context scores have (near) zero variance: {0:e}")]
    DegenerateVariance(f64),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("TPR level must lie in (0, 1], got {0}")]
    InvalidLevel(f64),
    #[error("neighbour count k={k} invalid for {rows} training rows")]
    InvalidNeighbors { k: usize, rows: usize },
    #[error("rejection threshold c must lie in [0, 1), got {0}")]
    InvalidRejection(f64),
    #[error("baseline method {0:?} not among compared methods")]
    UnknownBaseline(String),
    #[error("beta grid must be non-empty and strictly increasing")]
    InvalidGrid,
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("config invariant violated: {0}")]
    ConfigInvariantViolation(String),
    #[error("malformed CSV at line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}
