//! Crate-wide error type.

/// Errors produced by the dgflow library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or matrix shapes are incompatible for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A NaN or infinity appeared where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Conformers disagree in atom count or atom-type sequence.
    #[error("atom mismatch: {0}")]
    AtomMismatch(String),

    /// An element symbol or atomic number outside the supported table.
    #[error("unknown element: {0}")]
    UnknownElement(String),

    /// Text input could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// An iterative numerical procedure failed in a way that has no
    /// meaningful best-effort result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
