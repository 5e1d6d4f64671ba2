use alloc::string::String;
use core::fmt;

/// Errors raised by the numerical core.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// A coefficient vector or matrix contained NaN or infinity.
    NonFinite,
    /// Determinant of a 2×2 group element is not 1.
    NotUnimodular { det: f64 },
    /// Operation requires an even-degree form.
    OddDegree(usize),
    /// Two objects had incompatible sizes.
    DimensionMismatch { expected: usize, found: usize },
    /// Transvectant order larger than either degree.
    OrderOutOfRange { order: usize, max: usize },
    /// Univariate input degree exceeds the homogenisation target.
    DegreeTooHigh { degree: usize, target: usize },
    /// Condition number requested for the zero matrix.
    ZeroMatrix,
    /// A linear system that must be invertible was singular.
    Singular(&'static str),
    /// Matrix supplied as symmetric was not.
    NotSymmetric,
    /// The polynomial lies on or outside the boundary of the SOS cone.
    NotStrictlyCertifiable { iterations: usize, residual: f64 },
    /// The Newton solver ran out of iterations.
    MaxIterations { iterations: usize, residual: f64 },
    /// The zero polynomial has no analytic center.
    ZeroPolynomial,
    /// Invalid configuration value.
    InvalidConfig(String),
    /// Wrong input kind for a model head.
    InputKind(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonFinite => write!(f, "non-finite value"),
            Error::NotUnimodular { det } => write!(f, "determinant {det} is not 1"),
            Error::OddDegree(d) => write!(f, "degree must be even (got {d})"),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::OrderOutOfRange { order, max } => {
                write!(f, "transvectant order {order} out of range (max {max})")
            }
            Error::DegreeTooHigh { degree, target } => {
                write!(f, "degree {degree} exceeds target degree {target}")
            }
            Error::ZeroMatrix => write!(f, "condition number of the zero matrix"),
            Error::Singular(what) => write!(f, "singular matrix in {what}"),
            Error::NotSymmetric => write!(f, "matrix is not symmetric"),
            Error::NotStrictlyCertifiable { iterations, residual } => write!(
                f,
                "not strictly certifiable (after {iterations} iterations, residual {residual:e})"
            ),
            Error::MaxIterations { iterations, residual } => {
                write!(f, "max iterations ({iterations}) reached, residual {residual:e}")
            }
            Error::ZeroPolynomial => write!(f, "zero polynomial"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::InputKind(msg) => write!(f, "wrong input kind: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
