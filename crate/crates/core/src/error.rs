use thiserror::Error;

use crate::body::BodyId;
use crate::world::WorldState;

#[derive(Debug, Error)]
pub enum PhysicsError {
    #[error("unknown body id {0}")]
    UnknownBody(BodyId),
    #[error("expected {expected} joint values, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid world: {0}")]
    Invalid(String),
    #[error("simulation diverged at t = {time:.4} s")]
    Diverged { time: f64, last: Box<WorldState> },
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    Invalid(String),
    #[error("initial overlap between {a} and {b} ({depth:.4} m)")]
    Overlap { a: String, b: String, depth: f64 },
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("scene parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum TwinError {
    #[error("operation requires online mode")]
    Offline,
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("proxy topology does not match twin: {0}")]
    Topology(String),
}
