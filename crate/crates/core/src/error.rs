use thiserror::Error;

/// Errors surfaced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown mode label: {0}")]
    UnknownLabel(String),

    #[error("degenerate measurement: measured-quadrature variance {0:.3e} is below tolerance")]
    DegenerateMeasurement(f64),

    #[error("linearization breakdown: U factor singular (|det U| = {0:.3e})")]
    LinearizationBreakdown(f64),

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("grid coverage: boundary mass {0:.3e} exceeds 1e-4 of total")]
    GridCoverage(f64),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 for configuration problems, 2 for
    /// numerical/engine failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io(_) => 1,
            _ => 2,
        }
    }
}
