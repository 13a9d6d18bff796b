//! Joint-articulated robot description and joint-space state.
//!
//! Joint `j` drives link `j`; its parent is either the world or an earlier
//! link, so the chain is a tree by construction once validated.

use nalgebra::{Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::body::{Body, BodyId};
use crate::math::{Pose, Quat, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Prismatic,
    Revolute,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdGains {
    pub kp: f64,
    pub kd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub kind: JointKind,
    /// Unit axis in the parent frame (world frame for root joints).
    pub axis: Vec3,
    /// Index into `RobotModel::links`, `None` for the world.
    pub parent: Option<usize>,
    /// Anchor in the parent frame (a world point for root joints).
    pub parent_anchor: Vec3,
    /// Anchor in the child link frame.
    pub child_anchor: Vec3,
    /// Child orientation relative to the parent at q = 0.
    pub rest_rotation: Quat,
    pub limits: [f64; 2],
    pub gains: PdGains,
}

impl Joint {
    /// A unit vector perpendicular to the axis, used as the zero-angle
    /// reference of revolute joints.
    pub(crate) fn reference_perp(&self) -> Vec3 {
        let a = self.axis;
        let trial = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        (trial - a * a.dot(&trial)).normalize()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub joints: Vec<Joint>,
    pub links: Vec<BodyId>,
    pub end_effector_link: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub q_desired: Vec<f64>,
}

impl RobotState {
    pub fn at_rest(q: Vec<f64>) -> Self {
        Self {
            qdot: vec![0.0; q.len()],
            q_desired: q.clone(),
            q,
        }
    }
}

impl RobotModel {
    /// No joints: a world of free bodies only.
    pub fn empty() -> Self {
        Self {
            joints: Vec::new(),
            links: Vec::new(),
            end_effector_link: 0,
        }
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.joints.len() != self.links.len() {
            return Err(format!(
                "{} joints but {} links",
                self.joints.len(),
                self.links.len()
            ));
        }
        if !self.links.is_empty() && self.end_effector_link >= self.links.len() {
            return Err("end-effector link out of range".into());
        }
        for (j, joint) in self.joints.iter().enumerate() {
            if let Some(p) = joint.parent {
                if p >= j {
                    return Err(format!("joint {j} has parent link {p}; chain must be topologically ordered"));
                }
            }
            if !(joint.limits[0] < joint.limits[1]) {
                return Err(format!("joint {j} limits are empty"));
            }
            if (joint.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(format!("joint {j} axis is not unit length"));
            }
        }
        Ok(())
    }

    pub fn clamp(&self, q: &[f64]) -> Vec<f64> {
        q.iter()
            .zip(&self.joints)
            .map(|(v, j)| v.clamp(j.limits[0], j.limits[1]))
            .collect()
    }

    /// Indices of link `j` and every link below it.
    pub fn subtree(&self, j: usize) -> Vec<usize> {
        let mut out = vec![j];
        for k in j + 1..self.joints.len() {
            if let Some(p) = self.joints[k].parent {
                if out.contains(&p) {
                    out.push(k);
                }
            }
        }
        out
    }

    /// World anchor of joint `j` on its parent side.
    pub(crate) fn parent_anchor_world(&self, j: usize, parent_pose: Option<&Pose>) -> Vec3 {
        let joint = &self.joints[j];
        match parent_pose {
            Some(p) => p.transform_point(&joint.parent_anchor),
            None => joint.parent_anchor,
        }
    }

    pub(crate) fn axis_world(&self, j: usize, parent_pose: Option<&Pose>) -> Vec3 {
        let joint = &self.joints[j];
        match parent_pose {
            Some(p) => p.orientation * joint.axis,
            None => joint.axis,
        }
    }

    /// Pose of link `j` for joint value `q` given its parent's pose.
    pub(crate) fn child_pose(&self, j: usize, parent_pose: Option<&Pose>, q: f64) -> Pose {
        let joint = &self.joints[j];
        let parent_rot = parent_pose.map(|p| p.orientation).unwrap_or_else(Quat::identity);
        let anchor = self.parent_anchor_world(j, parent_pose);
        let axis = self.axis_world(j, parent_pose);
        match joint.kind {
            JointKind::Prismatic => {
                let rot = parent_rot * joint.rest_rotation;
                let a = anchor + axis * q;
                Pose::new(a - rot * joint.child_anchor, rot)
            }
            JointKind::Revolute => {
                let spin = Quat::from_axis_angle(&Unit::new_normalize(joint.axis), q);
                let rot = parent_rot * spin * joint.rest_rotation;
                Pose::new(anchor - rot * joint.child_anchor, rot)
            }
        }
    }

    /// Joint position and velocity measured from the current link bodies.
    pub(crate) fn measure(&self, j: usize, parent: Option<&Body>, child: &Body) -> (f64, f64) {
        let joint = &self.joints[j];
        let parent_pose = parent.map(|b| &b.pose);
        let axis = self.axis_world(j, parent_pose);
        let a_p = self.parent_anchor_world(j, parent_pose);
        let a_c = child.pose.transform_point(&joint.child_anchor);
        let (v_p, w_p, r_p) = match parent {
            Some(b) => (b.linear_velocity, b.angular_velocity, a_p - b.pose.position),
            None => (Vec3::zeros(), Vec3::zeros(), Vec3::zeros()),
        };
        match joint.kind {
            JointKind::Prismatic => {
                let r_c = a_c - child.pose.position;
                let vel_c = child.linear_velocity + child.angular_velocity.cross(&r_c);
                let vel_p = v_p + w_p.cross(&r_p);
                (axis.dot(&(a_c - a_p)), axis.dot(&(vel_c - vel_p)))
            }
            JointKind::Revolute => {
                let perp = joint.reference_perp();
                let parent_rot = parent_pose.map(|p| p.orientation).unwrap_or_else(Quat::identity);
                let b_p = parent_rot * perp;
                let b_c = child.pose.orientation * (joint.rest_rotation.inverse() * perp);
                let angle = axis.dot(&b_p.cross(&b_c)).atan2(b_p.dot(&b_c));
                (angle, axis.dot(&(child.angular_velocity - w_p)))
            }
        }
    }
}

/// Convenience for authoring: a prismatic joint with identity rest rotation.
pub fn prismatic(
    axis: Vector3<f64>,
    parent: Option<usize>,
    parent_anchor: Vec3,
    limits: [f64; 2],
    gains: PdGains,
) -> Joint {
    Joint {
        kind: JointKind::Prismatic,
        axis: axis.normalize(),
        parent,
        parent_anchor,
        child_anchor: Vec3::zeros(),
        rest_rotation: Quat::identity(),
        limits,
        gains,
    }
}
