//! Observation inputs and the fixed affine normalization of joints, poses and
//! pixels.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use twinsim_core::demo::Frame;
use twinsim_core::math::Pose;
use twinsim_core::render::{render, Image};
use twinsim_core::scene::{world_from_snapshot, SceneConfig, TBLOCK_ID};
use twinsim_core::world::WorldState;

use crate::error::PolicyError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepresentationKind {
    State,
    StaticCam,
    GripperCam,
}

impl RepresentationKind {
    pub const ALL: [RepresentationKind; 3] = [Self::State, Self::StaticCam, Self::GripperCam];

    pub fn is_camera(self) -> bool {
        self != Self::State
    }
}

impl fmt::Display for RepresentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::State => "state",
            Self::StaticCam => "static-cam",
            Self::GripperCam => "gripper-cam",
        })
    }
}

impl FromStr for RepresentationKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "state" => Ok(Self::State),
            "static-cam" => Ok(Self::StaticCam),
            "gripper-cam" => Ok(Self::GripperCam),
            other => Err(PolicyError::UnknownKind(other.to_string())),
        }
    }
}

/// Raw world-derived inputs for one observation.
#[derive(Clone, Debug, PartialEq)]
pub enum ObsInput {
    State { q: Vec<f64>, pose: Pose },
    Image { q: Vec<f64>, image: Image },
}

impl ObsInput {
    pub fn q(&self) -> &[f64] {
        match self {
            Self::State { q, .. } | Self::Image { q, .. } => q,
        }
    }

    pub fn matches(&self, kind: RepresentationKind) -> bool {
        matches!(self, Self::State { .. }) != kind.is_camera()
    }
}

/// Offset (m) that maps to one unit in relative waypoint encoding.
pub const RELATIVE_SCALE: f64 = 0.1;

/// Observed joint and object positions are expressed in units of this many
/// meters. The workspace half-extent spans about 60 units: millimeter
/// differences in block or pusher position must be visible to the network.
pub const OBS_POSITION_SCALE: f64 = 0.004;

/// Maps joints and positions to normalized coordinates around the gantry
/// workspace center, and progress to `2p - 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub q_center: Vec<f64>,
    pub q_scale: Vec<f64>,
    /// When set, waypoints are encoded as offsets from the observed joints
    /// divided by this scale instead of through `q_center`/`q_scale`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_scale: Option<Vec<f64>>,
    /// Scale of observed positions; `q_scale` when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obs_scale: Option<Vec<f64>>,
}

impl Normalizer {
    pub fn from_scene(scene: &SceneConfig) -> Self {
        let ws = &scene.robot.workspace;
        Self {
            q_center: (0..2).map(|i| 0.5 * (ws.min[i] + ws.max[i])).collect(),
            q_scale: (0..2).map(|i| 0.5 * (ws.max[i] - ws.min[i])).collect(),
            relative_scale: Some(vec![RELATIVE_SCALE; 2]),
            obs_scale: Some(vec![OBS_POSITION_SCALE; 2]),
        }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            q_center: vec![0.0; d],
            q_scale: vec![1.0; d],
            relative_scale: None,
            obs_scale: None,
        }
    }

    pub fn d(&self) -> usize {
        self.q_center.len()
    }

    fn obs_scale(&self) -> &[f64] {
        self.obs_scale.as_deref().unwrap_or(&self.q_scale)
    }

    /// Normalized observed joints.
    pub fn q<'a>(&'a self, q: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        q.iter().zip(self.q_center.iter().zip(self.obs_scale())).map(|(v, (c, s))| (v - c) / s)
    }

    pub fn q_inverse(&self, i: usize, v: f64) -> f64 {
        v * self.q_scale[i] + self.q_center[i]
    }

    /// Position in planar coordinates, height as is; quaternion with `w >= 0`.
    pub fn pose(&self, pose: &Pose) -> [f64; 7] {
        let p = pose.position;
        let mut quat = pose.quat_wxyz();
        if quat[0] < 0.0 {
            quat.iter_mut().for_each(|v| *v = -*v);
        }
        let scale = self.obs_scale();
        let x = (p.x - self.q_center[0]) / scale[0];
        let y = (p.y - self.q_center[1]) / scale[1];
        [x, y, p.z, quat[0], quat[1], quat[2], quat[3]]
    }

    /// Normalized joint `i` of a waypoint, given the observed joints.
    pub fn waypoint(&self, i: usize, v: f64, q_obs: &[f64]) -> f64 {
        match &self.relative_scale {
            Some(s) => (v - q_obs[i]) / s[i],
            None => (v - self.q_center[i]) / self.q_scale[i],
        }
    }

    pub fn waypoint_inverse(&self, i: usize, v: f64, q_obs: &[f64]) -> f64 {
        match &self.relative_scale {
            Some(s) => v * s[i] + q_obs[i],
            None => self.q_inverse(i, v),
        }
    }

    /// Normalized target row: per waypoint `d` joints then progress.
    pub fn action(&self, raw: &[f64], m: usize, q_obs: &[f64]) -> Vec<f64> {
        let d = self.d();
        let mut out = Vec::with_capacity(raw.len());
        for k in 0..m {
            let w = &raw[k * (d + 1)..(k + 1) * (d + 1)];
            out.extend((0..d).map(|i| self.waypoint(i, w[i], q_obs)));
            out.push(2.0 * w[d] - 1.0);
        }
        out
    }
}

pub fn pixels(image: &Image) -> impl Iterator<Item = f64> + '_ {
    image.data.iter().map(|&v| v as f64 / 255.0 - 0.5)
}

/// A batch of observation inputs, already normalized: joints plus either the
/// object pose or the image pixels (HWC).
#[derive(Clone, Debug, PartialEq)]
pub struct ObsBatch {
    pub q: Array2<f64>,
    pub extra: Array2<f64>,
}

impl ObsBatch {
    pub fn len(&self) -> usize {
        self.q.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_inputs(inputs: &[&ObsInput], norm: &Normalizer) -> Result<Self, PolicyError> {
        let first = inputs.first().ok_or(PolicyError::EmptyBatch)?;
        let d = norm.d();
        let width = match first {
            ObsInput::State { .. } => 7,
            ObsInput::Image { image, .. } => image.data.len(),
        };
        let mut q = Array2::zeros((inputs.len(), d));
        let mut extra = Array2::zeros((inputs.len(), width));
        for (i, input) in inputs.iter().enumerate() {
            if input.q().len() != d {
                return Err(PolicyError::Shape(format!("expected {d} joints, got {}", input.q().len())));
            }
            for (dst, v) in q.row_mut(i).iter_mut().zip(norm.q(input.q())) {
                *dst = v;
            }
            let mut row = extra.row_mut(i);
            match input {
                ObsInput::State { pose, .. } if width == 7 => {
                    row.iter_mut().zip(norm.pose(pose)).for_each(|(d, v)| *d = v);
                }
                ObsInput::Image { image, .. } if image.data.len() == width => {
                    row.iter_mut().zip(pixels(image)).for_each(|(d, v)| *d = v);
                }
                _ => return Err(PolicyError::Shape("mixed observation inputs in one batch".into())),
            }
        }
        Ok(Self { q, extra })
    }
}

/// Builds the observation input of `kind` from a live world.
pub fn observe_world(kind: RepresentationKind, scene: &SceneConfig, world: &WorldState) -> Result<ObsInput, PolicyError> {
    let q = world.robot.q.clone();
    Ok(match kind {
        RepresentationKind::State => ObsInput::State {
            q,
            pose: world.body(TBLOCK_ID).ok_or(PolicyError::MissingObject)?.pose,
        },
        RepresentationKind::StaticCam => ObsInput::Image {
            q,
            image: render(world, &scene.cameras.static_cam)?,
        },
        RepresentationKind::GripperCam => ObsInput::Image {
            q,
            image: render(world, &scene.cameras.gripper_cam)?,
        },
    })
}

/// Builds the observation input of `kind` from a recorded frame. Camera kinds
/// rebuild the scene at that instant and render it.
pub fn observe_frame(kind: RepresentationKind, scene: &SceneConfig, frame: &Frame) -> Result<ObsInput, PolicyError> {
    match kind {
        RepresentationKind::State => Ok(ObsInput::State {
            q: frame.q.clone(),
            pose: frame
                .objects
                .iter()
                .find(|o| o.id == TBLOCK_ID)
                .ok_or(PolicyError::MissingObject)?
                .pose,
        }),
        _ => {
            let world = world_from_snapshot(scene, &frame.q, &frame.object_poses())?;
            observe_world(kind, scene, &world)
        }
    }
}
