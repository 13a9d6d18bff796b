//! Command-line front end and teleoperation server for the PushT twin.

pub mod commands;
pub mod paths;
pub mod server;
pub mod wire;

pub use paths::DataDir;
pub use server::{serve, ServerConfig, ServerError, Session};
