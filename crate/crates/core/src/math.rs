//! Small geometric helpers shared by the simulator, the twin and the renderer.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub type Vec3 = Vector3<f64>;
pub type Quat = UnitQuaternion<f64>;

/// Rigid transform: position in meters plus unit-quaternion orientation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quat,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vec3::zeros(),
            orientation: Quat::identity(),
        }
    }

    pub fn new(position: Vec3, orientation: Quat) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn from_translation(position: Vec3) -> Self {
        Self::new(position, Quat::identity())
    }

    /// `self ∘ other`: `other` expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.position + self.orientation * other.position,
            orientation: self.orientation * other.orientation,
        }
    }

    pub fn transform_point(&self, local: &Vec3) -> Vec3 {
        self.position + self.orientation * local
    }

    pub fn inverse_transform_point(&self, world: &Vec3) -> Vec3 {
        self.orientation.inverse_transform_vector(&(world - self.position))
    }

    /// Quaternion components in (w, x, y, z) order.
    pub fn quat_wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn yaw(&self) -> f64 {
        yaw_of(&self.orientation)
    }
}

/// Builds a unit quaternion from (w, x, y, z) components, normalizing them.
pub fn quat_from_wxyz(q: [f64; 4]) -> Quat {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
}

/// Heading of the body x-axis projected on the table plane.
pub fn yaw_of(q: &Quat) -> f64 {
    let x = q * Vec3::x();
    x.y.atan2(x.x)
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Rotation vector (axis · angle) of `q`, taking the short way round.
pub fn axis_angle(q: &Quat) -> Vec3 {
    let q = q.quaternion();
    let (w, v) = if q.w < 0.0 {
        (-q.w, -q.imag())
    } else {
        (q.w, q.imag())
    };
    let s = v.norm();
    if s == 0.0 {
        return Vec3::zeros();
    }
    let angle = 2.0 * s.atan2(w);
    v * (angle / s)
}

/// Rotation vector of `target * current⁻¹`, evaluated so that identical
/// inputs give exactly zero.
pub fn rotation_error(target: &Quat, current: &Quat) -> Vec3 {
    let (a, b) = (target.quaternion(), current.quaternion());
    let (va, vb) = (a.imag(), b.imag());
    let w = a.w * b.w + va.dot(&vb);
    let v = va * b.w - vb * a.w - va.cross(&vb);
    axis_angle(&Quat::new_unchecked(nalgebra::Quaternion::from_parts(w, v)))
}

/// Planar pose of a body on the table: position and heading.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Se2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Se2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn from_pose(pose: &Pose) -> Self {
        Self::new(pose.position.x, pose.position.y, pose.yaw())
    }

    pub fn to_pose(&self, z: f64) -> Pose {
        Pose::new(
            Vec3::new(self.x, self.y, z),
            Quat::from_axis_angle(&Vector3::z_axis(), self.theta),
        )
    }

    /// Translation distance (m) and absolute wrapped heading difference (rad).
    pub fn distance(&self, other: &Se2) -> (f64, f64) {
        let dp = ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt();
        (dp, wrap_angle(self.theta - other.theta).abs())
    }

    /// Maps a point from this frame into the plane.
    pub fn apply(&self, local: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [
            self.x + c * local[0] - s * local[1],
            self.y + s * local[0] + c * local[1],
        ]
    }
}

/// Axis-aligned rectangle on the table plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Self { min, max }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.max[0] > self.min[0] && self.max[1] > self.min[1])
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (self.min[0]..=self.max[0]).contains(&p[0]) && (self.min[1]..=self.max[1]).contains(&p[1])
    }
}

/// Projects a planar target into the workspace rectangle, axis by axis.
pub fn clamp_to_plane(target: [f64; 2], workspace: &Rect) -> [f64; 2] {
    debug_assert!(!workspace.is_degenerate());
    [
        target[0].clamp(workspace.min[0], workspace.max[0]),
        target[1].clamp(workspace.min[1], workspace.max[1]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rotation_error_matches_relative_rotation() {
        let a = Quat::from_euler_angles(0.3, -0.2, 1.4);
        let b = Quat::from_euler_angles(-0.1, 0.5, -2.0);
        let direct = axis_angle(&(a * b.inverse()));
        assert_relative_eq!(rotation_error(&a, &b), direct, epsilon = 1e-12);
        assert_eq!(rotation_error(&a, &a), Vec3::zeros());
    }

    #[test]
    fn clamp_interior_is_identity() {
        let ws = Rect::new([-0.2, -0.1], [0.2, 0.1]);
        assert_eq!(clamp_to_plane([0.05, -0.03], &ws), [0.05, -0.03]);
    }

    #[test]
    fn clamp_outside_both_bounds_hits_corner() {
        let ws = Rect::new([-0.2, -0.1], [0.2, 0.1]);
        assert_eq!(clamp_to_plane([0.9, -0.7], &ws), [0.2, -0.1]);
        assert_eq!(clamp_to_plane([-3.0, 4.0], &ws), [-0.2, 0.1]);
    }

    #[test]
    fn clamp_outside_one_bound_touches_one_axis() {
        let ws = Rect::new([-0.2, -0.1], [0.2, 0.1]);
        assert_eq!(clamp_to_plane([0.5, 0.05], &ws), [0.2, 0.05]);
        assert_eq!(clamp_to_plane([0.1, -0.5], &ws), [0.1, -0.1]);
    }

    #[test]
    fn axis_angle_of_quarter_turn_about_z() {
        let q = Quat::from_axis_angle(&Vector3::z_axis(), PI / 2.0);
        let v = axis_angle(&q);
        assert_relative_eq!(v, Vec3::new(0.0, 0.0, PI / 2.0), epsilon = 1e-12);
        // double cover: -q is the same rotation
        let neg = UnitQuaternion::new_unchecked(-q.into_inner());
        assert_relative_eq!(axis_angle(&neg), v, epsilon = 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(0.3), 0.3);
    }

    #[test]
    fn se2_roundtrip_through_pose() {
        let s = Se2::new(0.1, -0.05, 2.5);
        let back = Se2::from_pose(&s.to_pose(0.01));
        let (dp, dth) = s.distance(&back);
        assert!(dp < 1e-15 && dth < 1e-12);
    }
}
