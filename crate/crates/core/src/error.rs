use alloc::string::String;
use core::fmt;

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Empty evaluation set passed to confusion-matrix construction.
    EmptyEvaluationSet,
    /// A class has no true samples, so its recall is undefined.
    DegeneratePrior,
    /// Shape mismatch between operands.
    DimMismatch(String),
    /// Non-finite value where a finite one is required.
    NonFinite(String),
    /// Input failed a domain precondition.
    InvalidInput(String),
    /// Head/tail metric selected with an empty head or tail set.
    EmptyHeadTailSet,
    /// No validation sample for some class, so its centroid is undefined.
    CentroidUndefined(usize),
    /// Gain-matrix decomposition G = M·D needs a positive diagonal.
    DecompositionUndefined,
    /// G^T p has no mass, so the normalized target is undefined.
    ZeroMassTarget,
    /// Gain stream entries must be normalized to |g| <= 1.
    UnnormalizedGainStream,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyEvaluationSet => write!(f, "empty evaluation set"),
            Error::DegeneratePrior => write!(f, "degenerate prior"),
            Error::DimMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::EmptyHeadTailSet => write!(f, "empty head or tail set"),
            Error::CentroidUndefined(k) => write!(f, "centroid undefined for class {k}"),
            Error::DecompositionUndefined => write!(f, "decomposition undefined"),
            Error::ZeroMassTarget => write!(f, "zero-mass consistency target"),
            Error::UnnormalizedGainStream => write!(f, "unnormalized gain stream"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
