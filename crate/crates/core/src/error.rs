use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix has zero dimension")]
    EmptyMatrix,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("non-finite value encountered at phase {phase}")]
    NonFinite { phase: f64 },

    #[error("operator has no dark space (trivial kernel)")]
    NoDarkSpace,

    #[error("superoperator is gapless (slowest non-stationary rate {rate:e})")]
    Gapless { rate: f64 },

    #[error("map is not completely positive: Choi eigenvalue {eigenvalue:e}")]
    NotCompletelyPositive { eigenvalue: f64 },

    #[error("map is not trace preserving: ||sum M^dag M - 1|| = {defect:e}")]
    NotTracePreserving { defect: f64 },

    #[error("matrix expected unitary, ||U^dag U - 1|| = {defect:e} at phase {phase}")]
    NonUnitary { phase: f64, defect: f64 },

    #[error("matrix expected Hermitian, defect {defect:e}")]
    NonHermitian { defect: f64 },

    #[error("protocol path is not cyclic: {0}")]
    NonCyclic(String),

    #[error("step size underflow at tau = {tau}")]
    StepSizeUnderflow { tau: f64 },

    #[error("invariant `{what}` violated at tau = {tau}: {value:e}")]
    InvariantViolation { tau: f64, what: &'static str, value: f64 },

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error("quadrature did not converge on [{a}, {b}]: estimated error {error:e}")]
    QuadratureNonConvergence { a: f64, b: f64, error: f64 },

    #[error("initial state leaks out of the dark space by {leakage:e}")]
    Leakage { leakage: f64 },

    #[error("operation requires a {expected}-dimensional dark space, got {got}")]
    DarkDimension { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidParameter(_)
                | Error::InvalidDensity(_)
                | Error::NonCyclic(_)
                | Error::DimensionMismatch { .. }
                | Error::NotSquare { .. }
                | Error::EmptyMatrix
                | Error::Leakage { .. }
                | Error::DarkDimension { .. }
                | Error::NoDarkSpace
        )
    }
}
