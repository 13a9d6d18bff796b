//! The PushT scene recipe: table, sphere-compound T-block, planar gantry
//! robot carrying a cylindrical pusher, and the two virtual cameras.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;

use crate::body::{Body, BodyId, Sphere};
use crate::error::SceneError;
use crate::math::{Pose, Rect, Se2, Vec3};
use crate::render::{look_at, look_rotation, Camera, CameraMount, Intrinsics};
use crate::robot::{prismatic, PdGains, RobotModel, RobotState};
use crate::world::{PhysicsParams, Table, WorldState};

pub const TBLOCK_ID: BodyId = BodyId(0);
pub const CARRIAGE_ID: BodyId = BodyId(1);
pub const PUSHER_ID: BodyId = BodyId(2);

/// Initial overlap allowed between bodies before construction is refused.
pub const OVERLAP_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TBlockConfig {
    pub sphere_radius: f64,
    pub spacing: f64,
    /// Length of the top bar between outermost sphere centers.
    pub bar_length: f64,
    /// Length of the stem between its end sphere centers.
    pub stem_length: f64,
    pub mass: f64,
    pub friction: f64,
    pub restitution: f64,
    pub color: [u8; 3],
    /// `None` samples a start pose from `start_region` with the build seed.
    pub initial: Option<Se2>,
    pub target: Se2,
    pub start_region: Rect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PusherConfig {
    pub radius: f64,
    /// Spheres stacked vertically to approximate the cylinder.
    pub stack: usize,
    pub mass: f64,
    pub friction: f64,
    pub color: [u8; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GantryConfig {
    pub carriage_mass: f64,
    /// y of the carriage rail, outside the workspace and camera views.
    pub rail_y: f64,
    pub x_gains: PdGains,
    pub y_gains: PdGains,
    pub home: [f64; 2],
    pub workspace: Rect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub static_cam: Camera,
    pub gripper_cam: Camera,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub name: String,
    pub dt: f64,
    pub physics: PhysicsParams,
    pub table: Table,
    pub tblock: TBlockConfig,
    pub pusher: PusherConfig,
    pub robot: GantryConfig,
    pub cameras: CameraConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::pusht()
    }
}

impl SceneConfig {
    pub fn pusht() -> Self {
        let sphere_radius = 0.01;
        Self {
            name: "pusht".into(),
            dt: 1.0 / 60.0,
            physics: PhysicsParams::default(),
            table: Table {
                height: 0.0,
                half_extent: [0.35, 0.35],
                friction: 0.4,
                restitution: 0.0,
                color: [200, 200, 190],
            },
            tblock: TBlockConfig {
                sphere_radius,
                spacing: 0.01,
                bar_length: 0.10,
                stem_length: 0.10,
                mass: 0.1,
                friction: 0.4,
                restitution: 0.0,
                color: [90, 110, 200],
                initial: None,
                target: Se2::new(0.0, 0.0, PI / 4.0),
                start_region: Rect::new([-0.1, -0.1], [0.1, 0.1]),
            },
            pusher: PusherConfig {
                radius: 0.0125,
                stack: 2,
                mass: 0.5,
                friction: 0.3,
                color: [220, 60, 60],
            },
            robot: GantryConfig {
                carriage_mass: 1.0,
                rail_y: -0.45,
                x_gains: PdGains { kp: 600.0, kd: 60.0 },
                y_gains: PdGains { kp: 200.0, kd: 20.0 },
                home: [0.0, -0.22],
                workspace: Rect::new([-0.24, -0.24], [0.24, 0.24]),
            },
            cameras: CameraConfig {
                static_cam: Camera {
                    intrinsics: Intrinsics::centered(64, 64.0),
                    mount: CameraMount::World(look_at(
                        Vec3::new(0.0, -0.45, 0.6),
                        Vec3::new(0.0, 0.0, 0.0),
                    )),
                },
                gripper_cam: Camera {
                    intrinsics: Intrinsics::centered(64, 40.0),
                    mount: CameraMount::Link {
                        link: PUSHER_ID,
                        // 30° off vertical, looking ahead (+y) of the pusher
                        extrinsic: Pose::new(
                            Vec3::new(0.0, -0.12, 0.18),
                            look_rotation(Vec3::new(0.0, 0.5, -(3f64.sqrt()) / 2.0)),
                        ),
                    },
                },
            },
        }
    }

    /// Canonical UTF-8 JSON document.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hex SHA-256 of the compact JSON serialization.
    pub fn digest(&self) -> String {
        let compact = serde_json::to_string(self).expect("scene config serializes");
        hex::encode(Sha256::digest(compact.as_bytes()))
    }

    pub fn workspace(&self) -> Rect {
        self.robot.workspace
    }

    pub fn target(&self) -> Se2 {
        self.tblock.target
    }

    /// Height of the T-block frame when resting on the table.
    pub fn rest_height(&self) -> f64 {
        self.table.height + self.tblock.sphere_radius
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::Invalid(m.into()));
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if self.robot.workspace.is_degenerate() {
            return bad("degenerate workspace");
        }
        if self.tblock.start_region.is_degenerate() {
            return bad("degenerate start region");
        }
        let t = &self.tblock;
        if !(t.sphere_radius > 0.0 && t.spacing > 0.0 && t.mass > 0.0) {
            return bad("T-block radius, spacing and mass must be positive");
        }
        if !(self.pusher.radius > 0.0 && self.pusher.mass > 0.0 && self.pusher.stack > 0) {
            return bad("pusher radius, mass and stack must be positive");
        }
        let target = [t.target.x, t.target.y];
        let ext = self.table.half_extent;
        if target[0].abs() > ext[0] || target[1].abs() > ext[1] {
            return bad("target pose is off the table");
        }
        Ok(())
    }

    /// T-block sphere centers in the authored (pre-centering) frame.
    fn tblock_layout(&self) -> Vec<[f64; 2]> {
        let t = &self.tblock;
        let mut pts = Vec::new();
        let bar_n = (t.bar_length / t.spacing).round() as i64;
        let top_y = t.stem_length / 2.0 + t.spacing / 2.0;
        for i in 0..=bar_n {
            pts.push([-t.bar_length / 2.0 + i as f64 * t.spacing, top_y]);
        }
        let stem_n = (t.stem_length / t.spacing).round() as i64;
        for i in 1..=stem_n {
            pts.push([0.0, top_y - i as f64 * t.spacing]);
        }
        pts
    }

    /// The T-block body at the origin (frame at its center of mass).
    pub fn tblock_body(&self) -> Body {
        let t = &self.tblock;
        let spheres = self
            .tblock_layout()
            .into_iter()
            .map(|[x, y]| Sphere {
                offset: Vec3::new(x, y, 0.0),
                radius: t.sphere_radius,
                color: t.color,
            })
            .collect();
        let (mut body, _) = Body::from_spheres(TBLOCK_ID, "tblock", t.mass, spheres);
        body.friction = t.friction;
        body.restitution = t.restitution;
        body
    }

    fn robot_bodies(&self) -> (Body, Body, f64) {
        let p = &self.pusher;
        let z = self.table.height + self.tblock.sphere_radius;
        let mut carriage = Body::new(
            CARRIAGE_ID,
            "carriage",
            self.robot.carriage_mass,
            Matrix3::identity() * 0.01,
        );
        carriage.spheres = vec![Sphere {
            offset: Vec3::new(0.0, self.robot.rail_y, 0.1),
            radius: 0.02,
            color: [80, 80, 80],
        }];
        carriage.gravity_enabled = false;
        let spheres = (0..p.stack)
            .map(|i| Sphere {
                offset: Vec3::new(0.0, 0.0, i as f64 * 2.0 * p.radius),
                radius: p.radius,
                color: p.color,
            })
            .collect();
        let mut pusher = Body::new(PUSHER_ID, "pusher", p.mass, Matrix3::identity() * 1e-3);
        pusher.spheres = spheres;
        pusher.gravity_enabled = false;
        pusher.friction = p.friction;
        (carriage, pusher, z)
    }

    fn robot_model(&self, z: f64) -> RobotModel {
        let ws = &self.robot.workspace;
        RobotModel {
            joints: vec![
                prismatic(
                    Vec3::x(),
                    None,
                    Vec3::new(0.0, 0.0, z),
                    [ws.min[0], ws.max[0]],
                    self.robot.x_gains,
                ),
                prismatic(Vec3::y(), Some(0), Vec3::zeros(), [ws.min[1], ws.max[1]], self.robot.y_gains),
            ],
            links: vec![CARRIAGE_ID, PUSHER_ID],
            end_effector_link: 1,
        }
    }

    /// Samples a T-block start pose that keeps clear of the pusher home.
    pub fn sample_start_pose<R: Rng>(&self, rng: &mut R) -> Se2 {
        let r = &self.tblock.start_region;
        loop {
            let pose = Se2::new(
                rng.random_range(r.min[0]..=r.max[0]),
                rng.random_range(r.min[1]..=r.max[1]),
                rng.random_range(-PI..PI),
            );
            if self.clear_of_pusher(&pose) {
                return pose;
            }
        }
    }

    fn clear_of_pusher(&self, pose: &Se2) -> bool {
        let body = self.tblock_body();
        let home = self.robot.home;
        body.spheres.iter().all(|s| {
            let c = pose.apply([s.offset.x, s.offset.y]);
            let d = ((c[0] - home[0]).powi(2) + (c[1] - home[1]).powi(2)).sqrt();
            d > s.radius + self.pusher.radius + 0.01
        })
    }
}

/// Builds the PushT world. Deterministic in `(config, seed)`.
pub fn build_scene(config: &SceneConfig, seed: u64) -> Result<WorldState, SceneError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = match config.tblock.initial {
        Some(p) => p,
        None => config.sample_start_pose(&mut rng),
    };
    let mut tblock = config.tblock_body();
    tblock.pose = start.to_pose(config.rest_height());
    let (carriage, pusher, z) = config.robot_bodies();
    let model = config.robot_model(z);
    let mut world = WorldState::new(
        vec![tblock, carriage, pusher],
        model,
        RobotState::at_rest(config.robot.home.to_vec()),
        Some(config.table.clone()),
        config.physics.clone(),
        config.dt,
    )?;
    world.set_configuration(&config.robot.home, &[])?;
    check_overlaps(&world)?;
    Ok(world)
}

/// Rebuilds a world from a recorded configuration (robot q plus object poses).
pub fn world_from_snapshot(
    config: &SceneConfig,
    q: &[f64],
    objects: &[(BodyId, Pose)],
) -> Result<WorldState, SceneError> {
    let mut cfg = config.clone();
    cfg.tblock.initial = Some(cfg.tblock.target);
    let (carriage, pusher, z) = cfg.robot_bodies();
    let model = cfg.robot_model(z);
    let mut world = WorldState::new(
        vec![cfg.tblock_body(), carriage, pusher],
        model,
        RobotState::at_rest(q.to_vec()),
        Some(cfg.table.clone()),
        cfg.physics.clone(),
        cfg.dt,
    )?;
    world.set_configuration(q, objects)?;
    Ok(world)
}

fn check_overlaps(world: &WorldState) -> Result<(), SceneError> {
    let bodies = &world.bodies;
    for i in 0..bodies.len() {
        for j in i + 1..bodies.len() {
            if world.is_robot_link(bodies[i].id) && world.is_robot_link(bodies[j].id) {
                continue;
            }
            for a in 0..bodies[i].spheres.len() {
                for b in 0..bodies[j].spheres.len() {
                    let d = (bodies[i].sphere_center(a) - bodies[j].sphere_center(b)).norm();
                    let depth = bodies[i].spheres[a].radius + bodies[j].spheres[b].radius - d;
                    if depth > OVERLAP_TOLERANCE {
                        return Err(SceneError::Overlap {
                            a: bodies[i].name.clone(),
                            b: bodies[j].name.clone(),
                            depth,
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

/// SE(2) pose of the T-block in `world`.
pub fn tblock_se2(world: &WorldState) -> Se2 {
    Se2::from_pose(&world.body(TBLOCK_ID).expect("PushT world has a T-block").pose)
}

/// Pusher position on the table plane.
pub fn pusher_xy(world: &WorldState) -> [f64; 2] {
    let p = world.body(PUSHER_ID).expect("PushT world has a pusher").pose.position;
    [p.x, p.y]
}
