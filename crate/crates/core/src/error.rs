use thiserror::Error;

use crate::equilibrium::PollingTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Why an iterative play failed to settle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NonConvergence {
    /// Iterates alternate between two points (`u^k ≈ u^{k-2}` while `u^k ≠ u^{k-1}`).
    Oscillation,
    /// Iterates left every bounded region or became non-finite.
    Divergence,
    /// The round budget ran out without any of the above.
    RoundLimit,
}

impl std::fmt::Display for NonConvergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NonConvergence::Oscillation => "period-2 oscillation",
            NonConvergence::Divergence => "divergence",
            NonConvergence::RoundLimit => "round limit reached",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch { context: &'static str, expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("Newton iteration stalled after {iterations} iterations (gradient residual {residual:.3e})")]
    NewtonFailure { iterations: usize, residual: f64, last: Vec<f64> },

    #[error("rank deficient system in {context}: rank {rank} of {required} required ({unknowns} unknowns)")]
    RankDeficient { context: String, rank: usize, required: usize, unknowns: usize },

    #[error("play did not converge after {rounds} rounds: {kind}")]
    NotConverged { kind: NonConvergence, rounds: usize, trace: Box<PollingTrace> },

    #[error("co-coercivity estimate failed: {0}")]
    Degenerate(String),

    #[error("malformed data at row {row}: {message}")]
    Malformed { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch { context, expected, got }
    }
}
