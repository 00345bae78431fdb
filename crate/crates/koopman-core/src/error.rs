use std::fmt;

/// Errors produced by the identification/control pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Input matrix is empty, non-finite, or dimensionally inconsistent.
    InvalidMatrix(String),
    /// An iterative decomposition failed to converge.
    NumericalFailure(String),
    /// Eigenvector basis too ill-conditioned to biorthonormalize.
    DegenerateSpectrum { condition: f64, cap: f64 },
    /// Riccati iteration hit its cap without converging.
    NoStabilizingSolution { iterations: usize, residual: f64 },
    /// Plant state became non-finite during integration.
    SimulationDiverged { step: usize },
    /// Not enough samples for the requested operation.
    InsufficientData { needed: usize, got: usize },
    /// Elementwise power lift produced a non-finite entry.
    LiftOverflow { sample: usize },
    /// Signal specification violates its own invariants.
    InvalidSpec(String),
    /// Mode basis condition number exceeds the projection cap.
    IllConditionedBasis { condition: f64 },
    /// Degenerate reference (zero initial displacement).
    InvalidReference(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidMatrix(msg) => write!(f, "invalid matrix: {msg}"),
            Error::NumericalFailure(msg) => write!(f, "numerical failure: {msg}"),
            Error::DegenerateSpectrum { condition, cap } => write!(
                f,
                "degenerate spectrum: eigenvector basis condition {condition:.3e} exceeds cap {cap:.3e}"
            ),
            Error::NoStabilizingSolution { iterations, residual } => write!(
                f,
                "no stabilizing Riccati solution after {iterations} iterations (residual {residual:.3e})"
            ),
            Error::SimulationDiverged { step } => {
                write!(f, "simulation diverged at step {step}")
            }
            Error::InsufficientData { needed, got } => {
                write!(f, "insufficient data: need {needed} samples, got {got}")
            }
            Error::LiftOverflow { sample } => {
                write!(f, "observable lift overflowed at sample {sample}")
            }
            Error::InvalidSpec(msg) => write!(f, "invalid signal spec: {msg}"),
            Error::IllConditionedBasis { condition } => {
                write!(f, "mode basis ill-conditioned: {condition:.3e}")
            }
            Error::InvalidReference(msg) => write!(f, "invalid reference: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
