use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its contract (bad ellipticity constant,
    /// misaligned grid, empty mask, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The conjugate gradient iteration hit its cap before reaching the
    /// requested relative residual.
    #[error("solver did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    SolverDiverged { residual: f64, iterations: usize },

    /// A dense system (normal equations, effective-matrix inversion) was
    /// numerically singular.
    #[error("singular system: {0}")]
    Singular(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed field or snapshot file.
    #[error("bad file format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
