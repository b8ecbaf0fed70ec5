use thiserror::Error;

/// Crate-wide error type.
///
/// The CLI maps these onto exit codes: invalid input and configuration
/// problems exit with 2, numerical failures (non-convergence, blow-up,
/// missing brackets) exit with 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The reaction term u^2/v is undefined for v <= 0.
    #[error("inhibitor value must be positive: v({node}) = {value}")]
    NonPositiveInhibitor { node: usize, value: f64 },

    #[error("Newton iteration did not converge after {iterations} steps (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular Jacobian encountered")]
    SingularJacobian,

    /// A requested pattern does not exist at the given parameters
    /// (e.g. C_0 <= 0 for the exact symmetric solution, or the tail
    /// recursion discriminant turning negative).
    #[error("pattern does not exist: {0}")]
    Nonexistence(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
