//! Flow-matching behavior-cloning policy for the PushT twin.
//!
//! The network is an MLP velocity field conditioned on either the T-block
//! pose or a camera image (through a jointly trained conv encoder). Training
//! regresses the straight-line flow from Gaussian noise to demonstrated
//! trajectories; inference integrates the field with Euler steps.

pub mod cfm;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod net;
pub mod nn;
pub mod obs;
pub mod train;

pub use cfm::{cfm_loss, cfm_loss_with, euler_integrate, sample_trajectory, ActionTrajectory, Batch, Draws, DEFAULT_EULER_STEPS};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use error::PolicyError;
pub use net::{NetSpec, PolicyNet};
pub use obs::{observe_frame, observe_world, Normalizer, ObsBatch, ObsInput, RepresentationKind};
pub use train::{train, train_from, TrainConfig, TrainOutcome, TrainingSet};
