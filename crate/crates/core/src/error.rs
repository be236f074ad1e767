use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("matrix is not diagonalizable (eigenvector condition number {condition:e}); exceptional point")]
    NonDiagonalizable { condition: f64 },

    #[error("spectrum is not real (max |Im h| = {max_imag:e}); no stationary metric exists")]
    ComplexSpectrum { max_imag: f64 },

    #[error("gauge transform is singular (condition number {condition:e})")]
    SingularTransform { condition: f64 },

    #[error("matrix is not Hermitian (deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("metric lost positive definiteness (min eigenvalue {min_eigenvalue:e})")]
    PositivityLoss { min_eigenvalue: f64 },

    #[error("residual gauge shift does not commute with H (residual {residual:e})")]
    GaugeViolation { residual: f64 },

    #[error("level {level} is degenerate")]
    DegenerateLevel { level: usize },

    #[error("exceptional point on transport path at step {step} (q = {q})")]
    EpOnPath { step: usize, q: f64 },

    #[error("point outside the model domain: {0}")]
    OutOfDomain(String),

    #[error("operation not applicable: {0}")]
    Inapplicable(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
