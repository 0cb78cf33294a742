use thiserror::Error;

use crate::model::GammaParams;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("stationarity violated: excitation/decay = {ratio} must be < 1")]
    Stationarity { ratio: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("state path did not reach an absorbing state within {max_jumps} jumps")]
    RunawayPath { max_jumps: usize },

    #[error("thinning produced more than {max_events} events in one segment")]
    Explosion { max_events: usize },

    #[error("episode {0:?} has no events")]
    EmptyEpisode(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// All samples (nearly) equal. `fallback` carries a capped-shape estimate
    /// that callers may use instead of failing.
    #[error("degenerate dispersion in Gamma fit (v = {v:e})")]
    DegenerateDispersion { v: f64, fallback: GammaParams },

    #[error("no episodes with label {0}")]
    EmptyClass(u8),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid model:\n{}", .0.join("\n"))]
    InvalidModel(Vec<String>),

    #[error("EM log-likelihood decreased from {previous} to {current}")]
    LikelihoodDecrease { previous: f64, current: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
