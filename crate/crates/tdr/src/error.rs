//! Crate-wide error type and result alias.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TdrError>;

#[derive(Debug, Error)]
pub enum TdrError {
    #[error("invalid state {state}: {reason}")]
    InvalidState { state: usize, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "policy overlap violation at state {state}: \
         pi_b({action}|s) = 0 while pi_e({action}|s) = {pi_e}"
    )]
    PolicyOverlap { state: usize, action: usize, pi_e: f64 },

    #[error("distributional overlap violation at state {state}: p_b(s) = 0 while p_e(s) = {p_e}")]
    DistributionalOverlap { state: usize, p_e: f64 },

    #[error("{what} did not converge within {cap} iterations (residual {residual:.3e})")]
    NonConvergence { what: &'static str, cap: usize, residual: f64 },

    #[error("degenerate weights: self-normalization denominator is not positive")]
    DegenerateWeights,

    #[error("infeasible program: {0}")]
    Infeasible(String),

    #[error("experiment failed: {0}")]
    ReplicationFailed(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TdrError {
    /// Exit code used by the command-line interface: 2 for configuration and
    /// parsing problems, 3 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            TdrError::Config(_) | TdrError::Parse(_) | TdrError::InvalidInput(_) => 2,
            TdrError::InvalidState { .. }
            | TdrError::PolicyOverlap { .. }
            | TdrError::DistributionalOverlap { .. }
            | TdrError::NonConvergence { .. }
            | TdrError::DegenerateWeights
            | TdrError::Infeasible(_)
            | TdrError::ReplicationFailed(_) => 3,
            TdrError::Io(_) => 1,
        }
    }
}
