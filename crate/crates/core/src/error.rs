//! Error type shared across the crate.

use thiserror::Error;

use crate::integrator::TrajectoryResult;
use crate::picard::IterationTrace;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {left} vs {right} points per axis")]
    GridMismatch { left: usize, right: usize },

    #[error("field has nonzero mean {mean:.3e} beyond tolerance")]
    NonZeroMean { mean: f64 },

    #[error("velocity field is not divergence-free (relative residual {residual:.3e})")]
    NotSolenoidal { residual: f64 },

    #[error("transport mode {index} is not divergence-free (relative residual {residual:.3e})")]
    NonSolenoidalMode { index: usize, residual: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("integration failed at step {step} (t = {time:.6})")]
    IntegrationFailure {
        step: usize,
        time: f64,
        partial: Box<TrajectoryResult>,
    },

    #[error("iteration is not contracting (ratio >= 1 for 3 consecutive levels)")]
    NonContraction { trace: Box<IterationTrace> },

    #[error(
        "solutions at levels {level_a} and {level_b} disagree on their overlap \
         (max deviation {deviation:.3e})"
    )]
    ConsistencyViolation {
        level_a: f64,
        level_b: f64,
        deviation: f64,
    },

    #[error("{failed} of {total} paths failed (more than 10%)")]
    TooManyPathFailures { failed: usize, total: usize },

    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
