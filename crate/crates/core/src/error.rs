//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by dataset construction, policy fitting, and estimation.
#[derive(Debug, Error)]
pub enum OpeError {
    /// The logging propensity of an action with positive target probability
    /// sits at or below the propensity floor, so importance weights are
    /// unbounded.
    #[error(
        "absolute continuity violated: action {action} has target probability \
         {target_prob:.3e} but logging propensity {propensity:.3e} (floor {floor:.1e})"
    )]
    AbsoluteContinuity {
        action: usize,
        target_prob: f64,
        propensity: f64,
        floor: f64,
    },

    #[error("step index {index} out of range for horizon {horizon}")]
    IndexOutOfRange { index: usize, horizon: usize },

    #[error("invalid action distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("logged propensity missing at trajectory {trajectory}, step {step}")]
    MissingPropensity { trajectory: usize, step: usize },

    #[error("fit did not converge after {iterations} iterations (score norm {score_norm:.3e})")]
    NonConvergence { iterations: usize, score_norm: f64 },

    #[error("information matrix is numerically singular")]
    SingularInformation,

    #[error("estimating-equation system is numerically singular")]
    SingularSystem,

    #[error("direct method is undefined for horizon {horizon} > 1")]
    UnsupportedHorizon { horizon: usize },

    #[error("numerical overflow in {0}")]
    NumericalOverflow(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, OpeError>;
