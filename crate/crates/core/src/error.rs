//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, alphabets, or support structures do not line up.
    #[error("structural error: {0}")]
    Structure(String),

    /// A documented precondition of an operation was violated.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// An iterative eigensolver ran out of its application budget.
    #[error("eigensolver did not converge after {applies} operator applications (residual {residual:.3e})")]
    Convergence { applies: usize, residual: f64 },

    /// A quadrature or factorization failed to reach the requested tolerance.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Input would exceed a hard resource limit (brute-force scales).
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// Argument outside the mathematical domain of a bound or formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// A tensor or model is not a valid state (e.g. zero leading eigenvalue).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A conditioning history has vanishing probability under the model.
    #[error("impossible history: conditional weight underflowed to {0:.3e}")]
    ImpossibleHistory(f64),

    /// No feasible point exists (e.g. every KL candidate has support mismatch).
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
