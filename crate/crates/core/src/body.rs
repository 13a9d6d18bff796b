use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::math::{Pose, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BodyId(pub u32);

impl fmt::Display for BodyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Collision sphere rigidly attached to a body frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub offset: Vec3,
    pub radius: f64,
    pub color: [u8; 3],
}

/// A rigid body whose collision geometry is a compound of spheres.
///
/// The body frame origin is the center of mass; `inertia` is expressed in
/// the body frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub id: BodyId,
    pub name: String,
    pub pose: Pose,
    pub linear_velocity: Vec3,
    pub angular_velocity: Vec3,
    pub mass: f64,
    pub inertia: Matrix3<f64>,
    pub spheres: Vec<Sphere>,
    pub gravity_enabled: bool,
    pub friction: f64,
    pub restitution: f64,
    /// Wrench accumulated for the next step only.
    #[serde(skip)]
    pub(crate) force: Vec3,
    #[serde(skip)]
    pub(crate) torque: Vec3,
}

impl Body {
    pub fn new(id: BodyId, name: impl Into<String>, mass: f64, inertia: Matrix3<f64>) -> Self {
        Self {
            id,
            name: name.into(),
            pose: Pose::identity(),
            linear_velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
            mass,
            inertia,
            spheres: Vec::new(),
            gravity_enabled: true,
            friction: 0.5,
            restitution: 0.0,
            force: Vec3::zeros(),
            torque: Vec3::zeros(),
        }
    }

    /// Builds a body from spheres of uniform density totalling `mass`.
    ///
    /// Sphere offsets are re-centered so the body origin sits at the center
    /// of mass; the returned offset is the shift that was applied (add it to
    /// an authored-frame point to get the body-frame point).
    pub fn from_spheres(
        id: BodyId,
        name: impl Into<String>,
        mass: f64,
        mut spheres: Vec<Sphere>,
    ) -> (Self, Vec3) {
        let volumes: Vec<f64> = spheres.iter().map(|s| s.radius.powi(3)).collect();
        let total: f64 = volumes.iter().sum();
        let com = spheres
            .iter()
            .zip(&volumes)
            .fold(Vec3::zeros(), |acc, (s, v)| acc + s.offset * (v / total));
        for s in &mut spheres {
            s.offset -= com;
        }
        let mut inertia = Matrix3::zeros();
        for (s, v) in spheres.iter().zip(&volumes) {
            let m = mass * v / total;
            let r = s.offset;
            let solid = 0.4 * m * s.radius * s.radius;
            inertia += Matrix3::identity() * solid
                + (Matrix3::identity() * r.dot(&r) - r * r.transpose()) * m;
        }
        let mut body = Self::new(id, name, mass, inertia);
        body.spheres = spheres;
        (body, -com)
    }

    pub fn sphere_center(&self, index: usize) -> Vec3 {
        self.pose.transform_point(&self.spheres[index].offset)
    }

    /// Radius of a ball around the body origin enclosing every sphere.
    pub fn bounding_radius(&self) -> f64 {
        self.spheres
            .iter()
            .map(|s| s.offset.norm() + s.radius)
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(format!("body {} has non-positive mass", self.name));
        }
        if self.spheres.is_empty() {
            return Err(format!("body {} has no collision spheres", self.name));
        }
        if self.spheres.iter().any(|s| !(s.radius > 0.0)) {
            return Err(format!("body {} has a non-positive sphere radius", self.name));
        }
        if self.inertia.cholesky().is_none() {
            return Err(format!("body {} inertia is not positive definite", self.name));
        }
        Ok(())
    }
}
