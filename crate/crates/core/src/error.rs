//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate projection: point depth {z} is not positive")]
    DegenerateProjection { z: f64 },

    #[error("ill-formed mesh: {0}")]
    IllFormedMesh(String),

    #[error("insufficient samples: needed {needed} {kind} points, pool had {available} after {attempts} attempts")]
    InsufficientSamples {
        kind: &'static str,
        needed: usize,
        available: usize,
        attempts: usize,
    },

    #[error("empty sampling grid")]
    EmptyGrid,

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("no valid voters for joint {joint}")]
    NoValidVoters { joint: usize },

    #[error("degenerate alignment: predicted pose collapses onto its root")]
    DegenerateAlignment,

    #[error("invalid placement: {0}")]
    InvalidPlacement(String),

    #[error("training diverged at step {step}: loss is not finite (lr {lr}, grad norm {grad_norm})")]
    TrainingDiverged { step: usize, lr: f64, grad_norm: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
