//! Simulation side of the PushT digital twin: a sphere-compound XPBD
//! simulator with a PD-driven planar gantry, the twin/proxy coupling, a
//! sphere rasterizer for virtual cameras, and demonstration recording.

pub mod body;
pub mod demo;
pub mod error;
pub mod math;
pub mod render;
pub mod robot;
pub mod scene;
mod solver;
pub mod twin;
pub mod world;

pub use body::{Body, BodyId, Sphere};
pub use error::{PhysicsError, SceneError, TwinError};
pub use math::{clamp_to_plane, Pose, Quat, Rect, Se2, Vec3};
pub use robot::{Joint, JointKind, PdGains, RobotModel, RobotState};
pub use scene::{build_scene, SceneConfig};
pub use twin::{CorrectiveInput, CoupledSystem, Mode, Wrench};
pub use world::{PhysicsParams, Table, WorldState};
