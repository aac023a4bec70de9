use alloc::string::String;

/// Errors raised by the numerical core and the data protocol.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is singular or indefinite even after diagonal jitter")]
    Singular,
    #[error("non-finite value: {0}")]
    NonFinite(&'static str),
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid subset: {0}")]
    InvalidSubset(&'static str),
    #[error("ground set of {n} items is too large for enumeration (max {max})")]
    TooLarge { n: usize, max: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no unseen catalog items left to sample from")]
    CatalogExhausted,
    #[error("too many skipped instances in epoch {epoch}: {skipped} of {total}")]
    TooManySkipped {
        epoch: usize,
        skipped: usize,
        total: usize,
    },
}

pub type Result<T> = core::result::Result<T, Error>;
