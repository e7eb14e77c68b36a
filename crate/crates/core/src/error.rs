use thiserror::Error;

/// Failures raised by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error(
        "truncation deficit {deficit:.3e} exceeds tolerance {tolerance:.1e} (cutoff {cutoff})"
    )]
    Truncation {
        deficit: f64,
        tolerance: f64,
        cutoff: usize,
    },

    #[error("leakage {leakage:.3e} past the cutoff exceeds tolerance {tolerance:.1e}")]
    Leakage { leakage: f64, tolerance: f64 },

    #[error("joint dimension {dim} exceeds the budget of {budget}")]
    DimensionBudget { dim: usize, budget: usize },

    #[error("mode index {index} out of range for a {arity}-mode register")]
    ModeIndex { index: usize, arity: usize },

    #[error("shape mismatch: expected dimension {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("success probability {0:.3e} is too small to condition on")]
    VanishingProbability(f64),

    #[error("no convergence: {0}")]
    NoConvergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
