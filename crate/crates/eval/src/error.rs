use thiserror::Error;

use twinsim_core::demo::DemoError;
use twinsim_core::{PhysicsError, SceneError, TwinError};
use twinsim_policy::PolicyError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("confidence interval needs at least one trial")]
    NoTrials,
    #[error("{successes} successes out of {trials} trials")]
    Counts { successes: usize, trials: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Twin(#[from] TwinError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Demo(#[from] DemoError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
