use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// Variants are grouped loosely: the first block covers argument validation,
/// the second covers the on-disk formats. [`Error::is_io`] separates genuine
/// operating-system I/O failures from validation problems.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spacing {0:?}: components must be finite and > 0")]
    InvalidSpacing([f64; 3]),
    #[error("invalid grid dimensions {0:?}: every axis needs at least one voxel")]
    InvalidDims([usize; 3]),
    #[error("invalid class count {0}")]
    InvalidClassCount(usize),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid probability map: {0}")]
    InvalidProbability(String),
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("class count mismatch: {left} vs {right}")]
    ClassMismatch { left: usize, right: usize },
    #[error("invalid adjacency matrix: {0}")]
    InvalidMatrix(String),
    #[error("no subjects")]
    NoSubjects,
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("bad magic: expected \"AVOL0001\"")]
    BadMagic,
    #[error("truncated header")]
    TruncatedHeader,
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("header/payload mismatch: expected {expected} bytes, found {actual}")]
    PayloadMismatch { expected: usize, actual: usize },
    #[error("invalid prior document: {0}")]
    InvalidDocument(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the underlying file system rather than of the data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Csv(e) => matches!(e.kind(), csv::ErrorKind::Io(_)),
            Error::Json(e) => e.is_io(),
            _ => false,
        }
    }
}
