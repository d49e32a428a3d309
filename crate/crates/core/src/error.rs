use alloc::string::String;

/// Errors raised by the numerical kernel, the steppers and the checkers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("matrix is not symmetric: max |A_ij - A_ji| = {asymmetry:e} exceeds {tolerance:e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not positive semidefinite: lambda_min = {lambda_min:e}, lambda_max = {lambda_max:e}")]
    NotPsd { lambda_min: f64, lambda_max: f64 },

    #[error("matrix is singular within tolerance: lambda_min = {lambda_min:e}, lambda_max = {lambda_max:e}")]
    Singular { lambda_min: f64, lambda_max: f64 },

    #[error("eigendecomposition did not converge (matrix hash {matrix_hash:016x})")]
    NoConvergence { matrix_hash: u64 },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("potential does not support {0}")]
    Capability(&'static str),

    #[error("covariance lost positive definiteness at step {k}: lambda_min = {lambda_min:e}")]
    Divergence { k: usize, lambda_min: f64 },

    #[error("{method} did not converge within {iterations} iterations (residual {residual:e})")]
    NotConverged { method: &'static str, iterations: usize, residual: f64 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
