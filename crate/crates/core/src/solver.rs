//! One XPBD step over sphere-compound rigid bodies.
//!
//! Velocity prediction, a fixed number of Gauss-Seidel passes over
//! positional contact and joint constraints, velocity reconciliation from
//! the position change, then a velocity pass for friction and restitution.
//! Constraints are visited in body-id order so results are reproducible.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion};

use crate::error::PhysicsError;
use crate::math::{Pose, Quat, Vec3};
use crate::robot::JointKind;
use crate::twin::CorrectiveInput;
use crate::world::WorldState;

/// Broadphase slack: pairs closer than this are tracked during the solve.
const CONTACT_MARGIN: f64 = 0.005;

#[derive(Clone, Copy, Debug)]
struct Contact {
    /// `None` is the table plane.
    a: Option<usize>,
    sphere_a: usize,
    b: usize,
    sphere_b: usize,
    lambda: f64,
    normal_speed_before: f64,
    friction: f64,
    restitution: f64,
}

struct Geometry {
    normal: Vec3,
    depth: f64,
    arm_a: Vec3,
    arm_b: Vec3,
}

struct Solver<'w> {
    world: &'w WorldState,
    pos: Vec<Vec3>,
    rot: Vec<Quat>,
    vel: Vec<Vec3>,
    omega: Vec<Vec3>,
    inv_mass: Vec<f64>,
    inv_inertia: Vec<Matrix3<f64>>,
    link_body: Vec<usize>,
    is_link: Vec<bool>,
    prev_pos: Vec<Vec3>,
    prev_rot: Vec<Quat>,
}

pub(crate) fn step(world: &mut WorldState, u: &CorrectiveInput) -> Result<(), PhysicsError> {
    for w in &u.entries {
        world.apply_wrench(w.body, w.force, w.torque)?;
    }
    let snapshot = world.clone_dynamic();
    let dt = world.dt;

    apply_joint_drives(world);

    let mut s = Solver::new(world);
    s.predict(dt);
    let mut contacts = s.broadphase();
    let alpha = world.physics.contact_compliance / (dt * dt);
    for _ in 0..world.physics.iterations {
        for c in contacts.iter_mut() {
            s.solve_contact(c, alpha);
        }
        s.solve_joints();
    }
    for i in 0..s.pos.len() {
        s.vel[i] = (s.pos[i] - s.prev_pos[i]) / dt;
        let dq = (s.rot[i] * s.prev_rot[i].inverse()).into_inner();
        let w = dq.imag() * (2.0 / dt);
        s.omega[i] = if dq.w >= 0.0 { w } else { -w };
    }
    let gravity = world.physics.gravity.norm();
    for c in &contacts {
        if c.lambda > 0.0 {
            s.solve_contact_velocity(c, dt, gravity);
        }
    }
    let Solver {
        pos, rot, vel, omega, ..
    } = s;
    for (i, body) in world.bodies.iter_mut().enumerate() {
        body.pose = Pose::new(pos[i], rot[i]);
        body.linear_velocity = vel[i];
        body.angular_velocity = omega[i];
        body.force = Vec3::zeros();
        body.torque = Vec3::zeros();
    }
    world.time += dt;
    world.measure_joints();

    if !world.is_finite() || world.robot.q.iter().any(|v| !v.is_finite()) {
        let time = world.time;
        world.restore_dynamic(snapshot);
        return Err(PhysicsError::Diverged {
            time,
            last: Box::new(world.clone()),
        });
    }
    Ok(())
}

/// Implicit PD drive per joint, applied as a velocity change of the driven
/// subtree with the reaction on the parent link.
fn apply_joint_drives(world: &mut WorldState) {
    let dt = world.dt;
    let model = world.robot_model.clone();
    let links: Vec<usize> = model
        .links
        .iter()
        .map(|id| world.index_of(*id).expect("validated link"))
        .collect();
    for (j, joint) in model.joints.iter().enumerate() {
        let q = world.robot.q[j];
        let qd = world.robot.qdot[j];
        let target = world.robot.q_desired[j];
        let parent = joint.parent.map(|p| links[p]);
        let parent_pose = parent.map(|p| world.bodies[p].pose);
        let axis = model.axis_world(j, parent_pose.as_ref());
        let (kp, kd) = (joint.gains.kp, joint.gains.kd);
        match joint.kind {
            JointKind::Prismatic => {
                let subtree = model.subtree(j);
                let m_eff: f64 = subtree.iter().map(|&k| world.bodies[links[k]].mass).sum();
                let dqd = dt * (kp * (target - q) - kd * qd - dt * kp * qd)
                    / (m_eff + dt * kd + dt * dt * kp);
                for k in subtree {
                    world.bodies[links[k]].linear_velocity += axis * dqd;
                }
                if let Some(p) = parent {
                    let mp = world.bodies[p].mass;
                    world.bodies[p].linear_velocity -= axis * (dqd * m_eff / mp);
                }
            }
            JointKind::Revolute => {
                let child = &world.bodies[links[j]];
                let i_eff = axis_inertia(child.pose.orientation, &child.inertia, &axis);
                let dqd = dt * (kp * (target - q) - kd * qd - dt * kp * qd)
                    / (i_eff + dt * kd + dt * dt * kp);
                world.bodies[links[j]].angular_velocity += axis * dqd;
                if let Some(p) = parent {
                    let pb = &world.bodies[p];
                    let ip = axis_inertia(pb.pose.orientation, &pb.inertia, &axis);
                    world.bodies[p].angular_velocity -= axis * (dqd * i_eff / ip);
                }
            }
        }
    }
}

fn axis_inertia(rot: Quat, inertia: &Matrix3<f64>, axis: &Vec3) -> f64 {
    let local = rot.inverse_transform_vector(axis);
    local.dot(&(inertia * local))
}

fn rotate_by(q: Quat, dtheta: Vec3) -> Quat {
    let dq = Quaternion::from_imag(dtheta) * q.into_inner() * 0.5;
    UnitQuaternion::new_normalize(q.into_inner() + dq)
}

impl<'w> Solver<'w> {
    fn new(world: &'w WorldState) -> Self {
        let n = world.bodies.len();
        let mut is_link = vec![false; n];
        let link_body: Vec<usize> = world
            .robot_model
            .links
            .iter()
            .map(|id| world.index_of(*id).expect("validated link"))
            .collect();
        for &i in &link_body {
            is_link[i] = true;
        }
        Self {
            world,
            pos: world.bodies.iter().map(|b| b.pose.position).collect(),
            rot: world.bodies.iter().map(|b| b.pose.orientation).collect(),
            vel: world.bodies.iter().map(|b| b.linear_velocity).collect(),
            omega: world.bodies.iter().map(|b| b.angular_velocity).collect(),
            inv_mass: world.bodies.iter().map(|b| 1.0 / b.mass).collect(),
            inv_inertia: world
                .bodies
                .iter()
                .map(|b| b.inertia.try_inverse().expect("validated inertia"))
                .collect(),
            link_body,
            is_link,
            prev_pos: world.bodies.iter().map(|b| b.pose.position).collect(),
            prev_rot: world.bodies.iter().map(|b| b.pose.orientation).collect(),
        }
    }

    fn predict(&mut self, dt: f64) {
        let g = self.world.physics.gravity;
        for (i, b) in self.world.bodies.iter().enumerate() {
            let gravity = if b.gravity_enabled { g } else { Vec3::zeros() };
            self.vel[i] += (gravity + b.force * self.inv_mass[i]) * dt;
            let r = self.rot[i];
            let w_local = r.inverse_transform_vector(&self.omega[i]);
            let gyro = w_local.cross(&(b.inertia * w_local));
            let torque_local = r.inverse_transform_vector(&b.torque);
            let w_local = w_local + self.inv_inertia[i] * (torque_local - gyro) * dt;
            self.omega[i] = r * w_local;
            self.pos[i] += self.vel[i] * dt;
            self.rot[i] = rotate_by(r, self.omega[i] * dt);
        }
    }

    fn broadphase(&self) -> Vec<Contact> {
        let bodies = &self.world.bodies;
        let prev_rot = &self.prev_rot;
        let mut out = Vec::new();
        let radii: Vec<f64> = bodies.iter().map(|b| b.bounding_radius()).collect();
        let velocity_at = |i: usize, local: &Vec3| -> Vec3 {
            let arm = prev_rot[i] * local;
            bodies[i].linear_velocity + bodies[i].angular_velocity.cross(&arm)
        };
        for i in 0..bodies.len() {
            for j in i + 1..bodies.len() {
                if self.is_link[i] && self.is_link[j] {
                    continue;
                }
                if (self.pos[j] - self.pos[i]).norm() > radii[i] + radii[j] + CONTACT_MARGIN {
                    continue;
                }
                for (sa, a) in bodies[i].spheres.iter().enumerate() {
                    let ca = self.pos[i] + self.rot[i] * a.offset;
                    for (sb, b) in bodies[j].spheres.iter().enumerate() {
                        let cb = self.pos[j] + self.rot[j] * b.offset;
                        let d = cb - ca;
                        let dist = d.norm();
                        if dist < a.radius + b.radius + CONTACT_MARGIN {
                            let n = if dist > 1e-12 { d / dist } else { Vec3::z() };
                            let vb = velocity_at(j, &b.offset);
                            let va = velocity_at(i, &a.offset);
                            out.push(Contact {
                                a: Some(i),
                                sphere_a: sa,
                                b: j,
                                sphere_b: sb,
                                lambda: 0.0,
                                normal_speed_before: n.dot(&(vb - va)),
                                friction: 0.5 * (bodies[i].friction + bodies[j].friction),
                                restitution: 0.5 * (bodies[i].restitution + bodies[j].restitution),
                            });
                        }
                    }
                }
            }
        }
        if let Some(table) = &self.world.table {
            for (i, body) in bodies.iter().enumerate() {
                if self.is_link[i] {
                    continue;
                }
                for (s, sphere) in body.spheres.iter().enumerate() {
                    let c = self.pos[i] + self.rot[i] * sphere.offset;
                    let on_table = c.x.abs() <= table.half_extent[0] && c.y.abs() <= table.half_extent[1];
                    if on_table && c.z - sphere.radius - table.height < CONTACT_MARGIN {
                        out.push(Contact {
                            a: None,
                            sphere_a: 0,
                            b: i,
                            sphere_b: s,
                            lambda: 0.0,
                            normal_speed_before: velocity_at(i, &sphere.offset).z,
                            friction: 0.5 * (body.friction + table.friction),
                            restitution: 0.5 * (body.restitution + table.restitution),
                        });
                    }
                }
            }
        }
        out
    }

    fn geometry(&self, c: &Contact) -> Geometry {
        let bodies = &self.world.bodies;
        let sb = &bodies[c.b].spheres[c.sphere_b];
        let cb = self.pos[c.b] + self.rot[c.b] * sb.offset;
        match c.a {
            None => {
                let h = self.world.table.as_ref().map_or(0.0, |t| t.height);
                let n = Vec3::z();
                Geometry {
                    normal: n,
                    depth: h + sb.radius - cb.z,
                    arm_a: Vec3::zeros(),
                    arm_b: cb - n * sb.radius - self.pos[c.b],
                }
            }
            Some(a) => {
                let sa = &bodies[a].spheres[c.sphere_a];
                let ca = self.pos[a] + self.rot[a] * sa.offset;
                let d = cb - ca;
                let dist = d.norm();
                let n = if dist > 1e-12 { d / dist } else { Vec3::z() };
                Geometry {
                    normal: n,
                    depth: sa.radius + sb.radius - dist,
                    arm_a: ca + n * sa.radius - self.pos[a],
                    arm_b: cb - n * sb.radius - self.pos[c.b],
                }
            }
        }
    }

    fn world_inv_inertia(&self, i: usize, v: &Vec3) -> Vec3 {
        let r = self.rot[i];
        r * (self.inv_inertia[i] * r.inverse_transform_vector(v))
    }

    /// Generalized inverse mass of body `i` for a correction along `n` at `arm`.
    fn positional_weight(&self, i: Option<usize>, arm: &Vec3, n: &Vec3) -> f64 {
        match i {
            None => 0.0,
            Some(i) => {
                let rn = arm.cross(n);
                self.inv_mass[i] + rn.dot(&self.world_inv_inertia(i, &rn))
            }
        }
    }

    fn angular_weight(&self, i: Option<usize>, n: &Vec3) -> f64 {
        match i {
            None => 0.0,
            Some(i) => n.dot(&self.world_inv_inertia(i, n)),
        }
    }

    /// Applies positional impulse `p` at `arm` (sign +1 or -1).
    fn apply_positional(&mut self, i: Option<usize>, arm: &Vec3, p: &Vec3, sign: f64) {
        if let Some(i) = i {
            self.pos[i] += p * (self.inv_mass[i] * sign);
            let dtheta = self.world_inv_inertia(i, &arm.cross(p)) * sign;
            self.rot[i] = rotate_by(self.rot[i], dtheta);
        }
    }

    fn apply_rotation(&mut self, i: Option<usize>, p: &Vec3, sign: f64) {
        if let Some(i) = i {
            let dtheta = self.world_inv_inertia(i, p) * sign;
            self.rot[i] = rotate_by(self.rot[i], dtheta);
        }
    }

    fn apply_velocity(&mut self, i: Option<usize>, arm: &Vec3, p: &Vec3, sign: f64) {
        if let Some(i) = i {
            self.vel[i] += p * (self.inv_mass[i] * sign);
            let dw = self.world_inv_inertia(i, &arm.cross(p)) * sign;
            self.omega[i] += dw;
        }
    }

    fn solve_contact(&mut self, c: &mut Contact, alpha: f64) {
        let g = self.geometry(c);
        if g.depth <= 0.0 && c.lambda == 0.0 {
            return;
        }
        let w = self.positional_weight(c.a, &g.arm_a, &g.normal)
            + self.positional_weight(Some(c.b), &g.arm_b, &g.normal);
        // Projected update on the accumulated multiplier: a contact may give
        // back what it pushed earlier in the sweep, but never pull.
        let lambda = (c.lambda + (g.depth - alpha * c.lambda) / (w + alpha)).max(0.0);
        let dlambda = lambda - c.lambda;
        c.lambda = lambda;
        let p = g.normal * dlambda;
        self.apply_positional(c.a, &g.arm_a, &p, -1.0);
        self.apply_positional(Some(c.b), &g.arm_b, &p, 1.0);
        if c.lambda > 0.0 && c.friction > 0.0 {
            self.solve_static_friction(c);
        }
    }

    /// Where the body point now at `arm` was at the start of the step.
    fn previous_point(&self, i: usize, arm: &Vec3) -> Vec3 {
        let local = self.rot[i].inverse_transform_vector(arm);
        self.prev_pos[i] + self.prev_rot[i] * local
    }

    /// Cancels tangential slip of the contact points while it stays inside
    /// the friction cone.
    fn solve_static_friction(&mut self, c: &Contact) {
        let g = self.geometry(c);
        let n = g.normal;
        let moved = |s: &Self, i: Option<usize>, arm: &Vec3| match i {
            None => Vec3::zeros(),
            Some(i) => s.pos[i] + arm - s.previous_point(i, arm),
        };
        let d = moved(self, Some(c.b), &g.arm_b) - moved(self, c.a, &g.arm_a);
        let dt = d - n * n.dot(&d);
        let slip = dt.norm();
        if slip < 1e-12 {
            return;
        }
        let t = dt / slip;
        let w = self.positional_weight(c.a, &g.arm_a, &t) + self.positional_weight(Some(c.b), &g.arm_b, &t);
        let lambda_t = slip / w;
        if lambda_t > c.friction * c.lambda {
            return;
        }
        let p = t * lambda_t;
        self.apply_positional(c.a, &g.arm_a, &p, 1.0);
        self.apply_positional(Some(c.b), &g.arm_b, &p, -1.0);
    }

    fn solve_contact_velocity(&mut self, c: &Contact, dt: f64, gravity: f64) {
        let g = self.geometry(c);
        let n = g.normal;
        let vel_at = |s: &Self, i: Option<usize>, arm: &Vec3| match i {
            None => Vec3::zeros(),
            Some(i) => s.vel[i] + s.omega[i].cross(arm),
        };
        let v_rel = vel_at(self, Some(c.b), &g.arm_b) - vel_at(self, c.a, &g.arm_a);
        let vn = n.dot(&v_rel);
        let vt = v_rel - n * vn;
        let vt_len = vt.norm();
        if vt_len > 1e-12 && c.friction > 0.0 {
            let t = vt / vt_len;
            let w = self.positional_weight(c.a, &g.arm_a, &t)
                + self.positional_weight(Some(c.b), &g.arm_b, &t);
            // Coulomb bound on the impulse: mu times the normal impulse
            // lambda / dt delivered during the position solve.
            let p = t * -(vt_len / w).min(c.friction * c.lambda / dt);
            self.apply_velocity(c.a, &g.arm_a, &p, -1.0);
            self.apply_velocity(Some(c.b), &g.arm_b, &p, 1.0);
        }
        let e = if vn.abs() <= 2.0 * gravity * dt {
            0.0
        } else {
            c.restitution
        };
        let dvn = -vn + (-e * c.normal_speed_before).max(0.0);
        let w = self.positional_weight(c.a, &g.arm_a, &n) + self.positional_weight(Some(c.b), &g.arm_b, &n);
        let p = n * (dvn / w);
        self.apply_velocity(c.a, &g.arm_a, &p, -1.0);
        self.apply_velocity(Some(c.b), &g.arm_b, &p, 1.0);
    }

    fn parent_of(&self, j: usize) -> Option<usize> {
        self.world.robot_model.joints[j].parent.map(|p| self.link_body[p])
    }

    fn solve_joints(&mut self) {
        let model = &self.world.robot_model;
        for j in 0..model.dof() {
            let joint = &model.joints[j];
            let child = self.link_body[j];
            let parent = self.parent_of(j);
            let parent_pose = parent.map(|p| Pose::new(self.pos[p], self.rot[p]));
            let parent_rot = parent_pose.map(|p| p.orientation).unwrap_or_else(Quat::identity);

            // orientation
            let err = match joint.kind {
                JointKind::Prismatic => {
                    let dq = (parent_rot * joint.rest_rotation * self.rot[child].inverse()).into_inner();
                    let v = dq.imag() * 2.0;
                    if dq.w >= 0.0 {
                        v
                    } else {
                        -v
                    }
                }
                JointKind::Revolute => {
                    let a_p = parent_rot * joint.axis;
                    let a_c = self.rot[child] * (joint.rest_rotation.inverse() * joint.axis);
                    a_c.cross(&a_p)
                }
            };
            let angle = err.norm();
            if angle > 0.0 {
                let n = err / angle;
                let w = self.angular_weight(parent, &n) + self.angular_weight(Some(child), &n);
                let p = n * (angle / w);
                self.apply_rotation(Some(child), &p, 1.0);
                self.apply_rotation(parent, &p, -1.0);
            }

            // anchor
            let parent_pose = parent.map(|p| Pose::new(self.pos[p], self.rot[p]));
            let a_p = model.parent_anchor_world(j, parent_pose.as_ref());
            let a_c = self.pos[child] + self.rot[child] * joint.child_anchor;
            let axis = model.axis_world(j, parent_pose.as_ref());
            let d = a_c - a_p;
            let correction = match joint.kind {
                JointKind::Prismatic => {
                    let s = axis.dot(&d);
                    let mut c = d - axis * s;
                    if s < joint.limits[0] {
                        c += axis * (s - joint.limits[0]);
                    } else if s > joint.limits[1] {
                        c += axis * (s - joint.limits[1]);
                    }
                    c
                }
                JointKind::Revolute => d,
            };
            self.correct_anchor(parent, child, a_p, a_c, correction);

            if joint.kind == JointKind::Revolute {
                self.solve_revolute_limit(j, parent, child);
            }
        }
    }

    fn correct_anchor(&mut self, parent: Option<usize>, child: usize, a_p: Vec3, a_c: Vec3, c: Vec3) {
        let mag = c.norm();
        if mag == 0.0 {
            return;
        }
        let n = c / mag;
        let arm_c = a_c - self.pos[child];
        let arm_p = parent.map_or(Vec3::zeros(), |p| a_p - self.pos[p]);
        let w = self.positional_weight(Some(child), &arm_c, &n) + self.positional_weight(parent, &arm_p, &n);
        let p = n * (-mag / w);
        self.apply_positional(Some(child), &arm_c, &p, 1.0);
        self.apply_positional(parent, &arm_p, &p, -1.0);
    }

    fn solve_revolute_limit(&mut self, j: usize, parent: Option<usize>, child: usize) {
        let joint = &self.world.robot_model.joints[j];
        let parent_rot = parent.map_or(Quat::identity(), |p| self.rot[p]);
        let axis = parent_rot * joint.axis;
        let perp = joint.reference_perp();
        let b_p = parent_rot * perp;
        let b_c = self.rot[child] * (joint.rest_rotation.inverse() * perp);
        let angle = axis.dot(&b_p.cross(&b_c)).atan2(b_p.dot(&b_c));
        let excess = if angle < joint.limits[0] {
            angle - joint.limits[0]
        } else if angle > joint.limits[1] {
            angle - joint.limits[1]
        } else {
            return;
        };
        let w = self.angular_weight(parent, &axis) + self.angular_weight(Some(child), &axis);
        let p = axis * (-excess / w);
        self.apply_rotation(Some(child), &p, 1.0);
        self.apply_rotation(parent, &p, -1.0);
    }
}

pub(crate) fn joint_residual(world: &WorldState) -> f64 {
    let model = &world.robot_model;
    let mut worst: f64 = 0.0;
    for j in 0..model.dof() {
        let child = world.link_body(j).expect("validated link");
        let parent = model.joints[j].parent.map(|p| &world.link_body(p).expect("validated link").pose);
        let a_p = model.parent_anchor_world(j, parent);
        let a_c = child.pose.transform_point(&model.joints[j].child_anchor);
        let d = a_c - a_p;
        let r = match model.joints[j].kind {
            JointKind::Prismatic => {
                let axis = model.axis_world(j, parent);
                (d - axis * axis.dot(&d)).norm()
            }
            JointKind::Revolute => d.norm(),
        };
        worst = worst.max(r);
    }
    worst
}

pub(crate) fn max_penetration(world: &WorldState) -> f64 {
    let bodies = &world.bodies;
    let is_link = |i: usize| world.is_robot_link(bodies[i].id);
    let mut worst: f64 = 0.0;
    for i in 0..bodies.len() {
        for j in i + 1..bodies.len() {
            if is_link(i) && is_link(j) {
                continue;
            }
            for a in 0..bodies[i].spheres.len() {
                let ca = bodies[i].sphere_center(a);
                for b in 0..bodies[j].spheres.len() {
                    let cb = bodies[j].sphere_center(b);
                    let depth = bodies[i].spheres[a].radius + bodies[j].spheres[b].radius - (cb - ca).norm();
                    worst = worst.max(depth);
                }
            }
        }
        if let Some(t) = &world.table {
            if !is_link(i) {
                for (s, sphere) in bodies[i].spheres.iter().enumerate() {
                    let c = bodies[i].sphere_center(s);
                    worst = worst.max(t.height + sphere.radius - c.z);
                }
            }
        }
    }
    worst
}

#[derive(Clone)]
pub(crate) struct DynamicSnapshot {
    time: f64,
    bodies: Vec<(Pose, Vec3, Vec3)>,
    robot: crate::robot::RobotState,
}

impl WorldState {
    pub(crate) fn clone_dynamic(&self) -> DynamicSnapshot {
        DynamicSnapshot {
            time: self.time,
            bodies: self
                .bodies
                .iter()
                .map(|b| (b.pose, b.linear_velocity, b.angular_velocity))
                .collect(),
            robot: self.robot.clone(),
        }
    }

    pub(crate) fn restore_dynamic(&mut self, s: DynamicSnapshot) {
        self.time = s.time;
        for (b, (pose, v, w)) in self.bodies.iter_mut().zip(s.bodies) {
            b.pose = pose;
            b.linear_velocity = v;
            b.angular_velocity = w;
        }
        self.robot = s.robot;
    }
}
