use serde::{Deserialize, Serialize};

use crate::body::{Body, BodyId};
use crate::error::PhysicsError;
use crate::math::{Pose, Vec3};
use crate::robot::{RobotModel, RobotState};
use crate::solver;
use crate::twin::CorrectiveInput;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    pub gravity: Vec3,
    pub iterations: usize,
    /// Contact compliance (inverse stiffness, m/N); 0 is perfectly rigid.
    pub contact_compliance: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            gravity: Vec3::new(0.0, 0.0, -9.81),
            iterations: 8,
            contact_compliance: 0.0,
        }
    }
}

/// Horizontal support plane at `height`, spanning `half_extent` about the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub height: f64,
    pub half_extent: [f64; 2],
    pub friction: f64,
    pub restitution: f64,
    pub color: [u8; 3],
}

/// Full simulator state: objects, robot links and joint-space robot state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub time: f64,
    pub dt: f64,
    /// Sorted by id.
    pub bodies: Vec<Body>,
    pub robot: RobotState,
    pub robot_model: RobotModel,
    pub table: Option<Table>,
    pub physics: PhysicsParams,
}

pub const DEFAULT_DT: f64 = 1.0 / 60.0;

impl WorldState {
    /// Assembles and validates a world. Bodies are re-sorted by id.
    pub fn new(
        mut bodies: Vec<Body>,
        robot_model: RobotModel,
        robot: RobotState,
        table: Option<Table>,
        physics: PhysicsParams,
        dt: f64,
    ) -> Result<Self, PhysicsError> {
        bodies.sort_by_key(|b| b.id);
        let world = Self {
            time: 0.0,
            dt,
            bodies,
            robot,
            robot_model,
            table,
            physics,
        };
        world.validate().map_err(PhysicsError::Invalid)?;
        Ok(world)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt > 0.0) {
            return Err("dt must be positive".into());
        }
        for w in self.bodies.windows(2) {
            if w[0].id >= w[1].id {
                return Err(format!("duplicate body id {}", w[1].id));
            }
        }
        for b in &self.bodies {
            b.validate()?;
        }
        self.robot_model.validate()?;
        let d = self.robot_model.dof();
        if self.robot.q.len() != d || self.robot.qdot.len() != d || self.robot.q_desired.len() != d {
            return Err("robot state length does not match joint count".into());
        }
        for id in &self.robot_model.links {
            let b = self
                .body(*id)
                .ok_or_else(|| format!("robot link {id} is not a body"))?;
            if b.gravity_enabled {
                return Err(format!("robot link {} must not be affected by gravity", b.name));
            }
        }
        Ok(())
    }

    pub fn index_of(&self, id: BodyId) -> Option<usize> {
        self.bodies.binary_search_by_key(&id, |b| b.id).ok()
    }

    pub fn body(&self, id: BodyId) -> Option<&Body> {
        self.index_of(id).map(|i| &self.bodies[i])
    }

    pub fn body_mut(&mut self, id: BodyId) -> Option<&mut Body> {
        self.index_of(id).map(move |i| &mut self.bodies[i])
    }

    pub fn is_robot_link(&self, id: BodyId) -> bool {
        self.robot_model.links.contains(&id)
    }

    /// Non-robot bodies, in id order.
    pub fn objects(&self) -> impl Iterator<Item = &Body> {
        self.bodies.iter().filter(move |b| !self.is_robot_link(b.id))
    }

    pub fn object_ids(&self) -> Vec<BodyId> {
        self.objects().map(|b| b.id).collect()
    }

    pub fn link_body(&self, link: usize) -> Option<&Body> {
        self.robot_model.links.get(link).and_then(|id| self.body(*id))
    }

    pub fn end_effector(&self) -> &Body {
        self.link_body(self.robot_model.end_effector_link)
            .expect("validated robot has an end-effector body")
    }

    /// Accumulates an external wrench applied during the next step only.
    pub fn apply_wrench(&mut self, id: BodyId, force: Vec3, torque: Vec3) -> Result<(), PhysicsError> {
        let body = self.body_mut(id).ok_or(PhysicsError::UnknownBody(id))?;
        body.force += force;
        body.torque += torque;
        Ok(())
    }

    /// Sets the PD target, clamped to the joint limits.
    pub fn set_joint_target(&mut self, q_prime: &[f64]) -> Result<(), PhysicsError> {
        let d = self.robot_model.dof();
        if q_prime.len() != d {
            return Err(PhysicsError::Dimension {
                expected: d,
                got: q_prime.len(),
            });
        }
        self.robot.q_desired = self.robot_model.clamp(q_prime);
        Ok(())
    }

    /// Advances one fixed step under corrective input `u`.
    ///
    /// On divergence the state is restored and returned inside the error.
    pub fn step(&mut self, u: &CorrectiveInput) -> Result<(), PhysicsError> {
        solver::step(self, u)
    }

    /// Value-semantics variant of [`WorldState::step`].
    pub fn stepped(&self, u: &CorrectiveInput) -> Result<WorldState, PhysicsError> {
        let mut next = self.clone();
        next.step(u)?;
        Ok(next)
    }

    /// Places the robot at joint values `q` (at rest, target = q) and the
    /// listed objects at the given poses (at rest).
    pub fn set_configuration(
        &mut self,
        q: &[f64],
        objects: &[(BodyId, Pose)],
    ) -> Result<(), PhysicsError> {
        let d = self.robot_model.dof();
        if q.len() != d {
            return Err(PhysicsError::Dimension {
                expected: d,
                got: q.len(),
            });
        }
        let q = self.robot_model.clamp(q);
        let mut link_poses: Vec<Pose> = Vec::with_capacity(d);
        for j in 0..d {
            let parent = self.robot_model.joints[j].parent.map(|p| link_poses[p]);
            link_poses.push(self.robot_model.child_pose(j, parent.as_ref(), q[j]));
        }
        for (j, pose) in link_poses.into_iter().enumerate() {
            let id = self.robot_model.links[j];
            let body = self.body_mut(id).ok_or(PhysicsError::UnknownBody(id))?;
            body.pose = pose;
            body.linear_velocity = Vec3::zeros();
            body.angular_velocity = Vec3::zeros();
        }
        for (id, pose) in objects {
            let body = self.body_mut(*id).ok_or(PhysicsError::UnknownBody(*id))?;
            body.pose = *pose;
            body.linear_velocity = Vec3::zeros();
            body.angular_velocity = Vec3::zeros();
        }
        self.robot = RobotState::at_rest(q);
        Ok(())
    }

    /// Recomputes `robot.q` / `robot.qdot` from the link bodies.
    pub(crate) fn measure_joints(&mut self) {
        for j in 0..self.robot_model.dof() {
            let child = self.link_body(j).expect("validated link");
            let parent = self.robot_model.joints[j]
                .parent
                .map(|p| self.link_body(p).expect("validated link"));
            let (q, qd) = self.robot_model.measure(j, parent, child);
            self.robot.q[j] = q;
            self.robot.qdot[j] = qd;
        }
    }

    /// Largest perpendicular anchor mismatch over all joints (m).
    pub fn joint_residual(&self) -> f64 {
        solver::joint_residual(self)
    }

    /// Deepest sphere–sphere or sphere–table overlap among collidable pairs (m).
    pub fn max_penetration(&self) -> f64 {
        solver::max_penetration(self)
    }

    pub fn linear_momentum(&self) -> Vec3 {
        self.bodies
            .iter()
            .fold(Vec3::zeros(), |acc, b| acc + b.linear_velocity * b.mass)
    }

    pub fn is_finite(&self) -> bool {
        self.bodies.iter().all(|b| {
            b.pose.position.iter().all(|v| v.is_finite())
                && b.pose.orientation.coords.iter().all(|v| v.is_finite())
                && b.linear_velocity.iter().all(|v| v.is_finite())
                && b.angular_velocity.iter().all(|v| v.is_finite())
        })
    }
}
