use thiserror::Error;

use twinsim_core::render::RenderError;
use twinsim_core::{PhysicsError, SceneError};

use crate::checkpoint::Checkpoint;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("unknown representation kind {0:?}")]
    UnknownKind(String),
    #[error("checkpoint holds a {found} policy, expected {expected}")]
    KindMismatch { expected: String, found: String },
    #[error("observation has no T-block")]
    MissingObject,
    #[error("non-finite network output")]
    NonFinite,
    #[error("training diverged at step {step}")]
    Diverged { step: usize, last_good: Option<Box<Checkpoint>> },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
