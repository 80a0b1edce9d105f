use thiserror::Error;

/// Errors shared across the library.
///
/// Numerical diagnostics (minimum eigenvalues, condition indicators) ride
/// along where a caller can act on them — in particular
/// [`Error::InfeasibleDowndate`], which callers use to distinguish "this
/// downdate does not exist" from genuine solver failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:.6e})")]
    NotPsd { min_eig: f64 },

    #[error("matrix is not positive definite (min eigenvalue {min_eig:.6e})")]
    NotPd { min_eig: f64 },

    #[error("operator singular or indefinite")]
    SingularOperator,

    #[error("operator does not provide apply_inverse")]
    MissingInverse,

    #[error(
        "downdate infeasible: min eigenvalue of I - Z'A^-1 Z is {min_eig:.6e} (margin {margin:.1e})"
    )]
    InfeasibleDowndate { min_eig: f64, margin: f64 },

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("decay bound undefined: kappa_hat = {0} must exceed 1/4")]
    DecayDomain(f64),

    #[error("unknown solver '{0}'")]
    UnknownSolver(String),

    #[error("dense oracle guard: dimension {0} exceeds limit {1}")]
    DenseGuard(usize, usize),

    #[error("matrix market parse error at line {line}: {msg}")]
    MatrixMarket { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
