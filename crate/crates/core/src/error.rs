use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("graph is not strongly connected")]
    NotStronglyConnected,

    #[error("invalid stationary distribution: {0}")]
    InvalidDistribution(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("chain does not conform to the graph: {0}")]
    PatternMismatch(String),

    #[error("infeasible chain: {0}")]
    Infeasible(String),

    #[error(
        "power iteration did not converge after {iterations} iterations (last estimate {estimate})"
    )]
    PowerIteration { iterations: usize, estimate: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("projection did not converge after {rounds} rounds (affine residual {affine_residual:e}, last change {last_change:e})")]
    ProjectionNotConverged {
        rounds: usize,
        affine_residual: f64,
        last_change: f64,
    },

    #[error("spectral radius {0} is not below one (reducible or infeasible chain)")]
    Unstable(f64),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("horizon too short: {0}")]
    HorizonTooShort(String),

    #[error("numerical inconsistency: {0}")]
    Numerical(String),

    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
