//! Scripted pushing expert used for reproducible demonstrations.
//!
//! The expert picks a push on the T-block boundary, moves the pusher to a
//! standoff point behind it, pushes for a short distance and replans. Pushes
//! are ranked with a quasi-static model (ellipsoidal limit surface, sticking
//! contact) and the best few are checked by simulating them on a copy of the
//! world.

use serde::{Deserialize, Serialize};

use twinsim_core::math::{wrap_angle, Rect, Se2};
use twinsim_core::scene::{pusher_xy, tblock_se2, PUSHER_ID, TBLOCK_ID};
use twinsim_core::twin::CorrectiveInput;
use twinsim_core::world::WorldState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    /// Pusher speed while travelling to a push (m/s).
    pub approach_speed: f64,
    /// Pusher speed while in contact (m/s).
    pub push_speed: f64,
    /// Gap between the pusher and the block at the start of a push (m).
    pub standoff: f64,
    pub push_lengths: Vec<f64>,
    /// Directions tried per contact, as offsets from the inward normal (rad).
    pub push_angles: Vec<f64>,
    /// Metres of position error equivalent to one radian of heading error.
    pub angle_weight: f64,
    /// Within these bounds the expert stops moving.
    pub hold_position: f64,
    pub hold_angle: f64,
    /// Candidates verified by simulation per decision.
    pub lookahead: usize,
    /// Clearance kept from the block while travelling (m).
    pub clearance: f64,
    /// A push whose approach takes longer than this is abandoned (s).
    pub approach_timeout: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            approach_speed: 0.25,
            push_speed: 0.08,
            standoff: 0.012,
            push_lengths: vec![0.01, 0.025, 0.05],
            push_angles: vec![-0.3, 0.0, 0.3],
            angle_weight: 0.05,
            hold_position: 0.008,
            hold_angle: 4f64.to_radians(),
            lookahead: 8,
            clearance: 0.012,
            approach_timeout: 4.0,
        }
    }
}

/// A push in the block frame: the pusher starts at `start` and moves along
/// `dir` for `standoff + length`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Push {
    start: [f64; 2],
    dir: [f64; 2],
    length: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Phase {
    Plan,
    Approach { push: Push, elapsed: f64 },
    Push { origin: [f64; 2], dir: [f64; 2], travelled: f64, total: f64 },
}

/// Stateful push controller; call [`ScriptedExpert::act`] once per tick.
#[derive(Clone, Debug)]
pub struct ScriptedExpert {
    pub config: ExpertConfig,
    target: Se2,
    workspace: Rect,
    phase: Phase,
    command: Option<[f64; 2]>,
    geometry: Option<Geometry>,
}

#[derive(Clone, Debug)]
struct Geometry {
    centers: Vec<[f64; 2]>,
    sphere_radius: f64,
    pusher_radius: f64,
    /// Squared characteristic length of the support distribution.
    c2: f64,
    bound: f64,
    contacts: Vec<([f64; 2], [f64; 2])>,
}

fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn scale(a: [f64; 2], s: f64) -> [f64; 2] {
    [a[0] * s, a[1] * s]
}

fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn rotate(a: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * a[0] - s * a[1], s * a[0] + c * a[1]]
}

/// Distance from `p` to the segment `a`–`b`.
fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = sub(b, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    norm(sub(p, add(a, scale(ab, t))))
}

impl Geometry {
    fn from_world(world: &WorldState) -> Self {
        let block = world.body(TBLOCK_ID).expect("PushT world has a T-block");
        let pusher = world.body(PUSHER_ID).expect("PushT world has a pusher");
        let centers: Vec<[f64; 2]> = block.spheres.iter().map(|s| [s.offset.x, s.offset.y]).collect();
        let sphere_radius = block.spheres.iter().map(|s| s.radius).fold(0.0, f64::max);
        let pusher_radius = pusher.spheres.iter().map(|s| s.radius).fold(0.0, f64::max);
        let c2 = centers.iter().map(|c| c[0] * c[0] + c[1] * c[1]).sum::<f64>() / centers.len() as f64;
        let bound = centers.iter().map(|&c| norm(c)).fold(0.0, f64::max) + sphere_radius;
        let reach = sphere_radius + pusher_radius;
        let mut contacts = Vec::new();
        for &o in &centers {
            for k in 0..16 {
                let n = rotate([1.0, 0.0], k as f64 * std::f64::consts::PI / 8.0);
                let touch = add(o, scale(n, reach));
                // The pusher must reach this sphere before any other.
                if centers.iter().all(|&c| norm(sub(touch, c)) >= reach - 1e-9) {
                    contacts.push((touch, n));
                }
            }
        }
        Self {
            centers,
            sphere_radius,
            pusher_radius,
            c2,
            bound,
            contacts,
        }
    }

    fn clear_of_block(&self, a: [f64; 2], b: [f64; 2], margin: f64) -> bool {
        let reach = self.sphere_radius + self.pusher_radius + margin;
        self.centers.iter().all(|&c| segment_distance(c, a, b) >= reach)
    }
}

impl ScriptedExpert {
    pub fn new(target: Se2, workspace: Rect) -> Self {
        Self::with_config(target, workspace, ExpertConfig::default())
    }

    pub fn with_config(target: Se2, workspace: Rect, config: ExpertConfig) -> Self {
        Self {
            config,
            target,
            workspace,
            phase: Phase::Plan,
            command: None,
            geometry: None,
        }
    }

    pub fn target(&self) -> Se2 {
        self.target
    }

    fn cost(&self, pose: &Se2) -> f64 {
        let (dp, _) = pose.distance(&self.target);
        dp + self.config.angle_weight * wrap_angle(pose.theta - self.target.theta).abs()
    }

    /// True when the block is within the hold tolerance of the target.
    pub fn converged(&self, world: &WorldState) -> bool {
        let (dp, dth) = tblock_se2(world).distance(&self.target);
        dp <= self.config.hold_position && dth <= self.config.hold_angle
    }

    /// Next joint target for the gantry (pusher x, y).
    pub fn act(&mut self, world: &WorldState) -> Vec<f64> {
        if self.geometry.is_none() {
            self.geometry = Some(Geometry::from_world(world));
        }
        if self.converged(world) {
            self.phase = Phase::Plan;
            self.command = None;
            return world.robot.q.clone();
        }
        let dt = world.dt;
        let pusher = pusher_xy(world);
        let block = tblock_se2(world);
        let command = *self.command.get_or_insert(pusher);
        if self.phase == Phase::Plan {
            self.phase = match self.plan(world) {
                Some(push) => Phase::Approach { push, elapsed: 0.0 },
                None => Phase::Plan,
            };
        }
        let next = match self.phase {
            Phase::Plan => command,
            Phase::Approach { push, elapsed } => {
                let start = block.apply(push.start);
                if norm(sub(pusher, start)) < 0.004 && norm(sub(command, start)) < 1e-9 {
                    let dir = rotate(push.dir, block.theta);
                    self.phase = Phase::Push {
                        origin: start,
                        dir,
                        travelled: 0.0,
                        total: self.config.standoff + push.length,
                    };
                    self.push_command(dt)
                } else if elapsed > self.config.approach_timeout {
                    self.phase = Phase::Plan;
                    command
                } else {
                    self.phase = Phase::Approach {
                        push,
                        elapsed: elapsed + dt,
                    };
                    let goal = self.route(pusher, start, &block);
                    let step = sub(goal, command);
                    let limit = self.config.approach_speed * dt;
                    let len = norm(step);
                    let moved = if len > limit { add(command, scale(step, limit / len)) } else { goal };
                    // Keep the command from running far ahead of the pusher.
                    let lead = sub(moved, pusher);
                    let lead_len = norm(lead);
                    if lead_len > 0.03 {
                        add(pusher, scale(lead, 0.03 / lead_len))
                    } else {
                        moved
                    }
                }
            }
            Phase::Push { .. } => self.push_command(dt),
        };
        let next = twinsim_core::math::clamp_to_plane(next, &self.workspace);
        self.command = Some(next);
        let mut q = world.robot.q.clone();
        q[0] = next[0];
        q[1] = next[1];
        q
    }

    fn push_command(&mut self, dt: f64) -> [f64; 2] {
        let Phase::Push {
            origin,
            dir,
            travelled,
            total,
        } = self.phase
        else {
            unreachable!("push_command outside the push phase");
        };
        let travelled = (travelled + self.config.push_speed * dt).min(total + self.config.push_speed * 0.25);
        self.phase = if travelled >= total + self.config.push_speed * 0.25 {
            Phase::Plan
        } else {
            Phase::Push {
                origin,
                dir,
                travelled,
                total,
            }
        };
        add(origin, scale(dir, travelled.min(total)))
    }

    /// Next waypoint from `from` toward `to`, going around the block when
    /// the straight line would touch it.
    fn route(&self, from: [f64; 2], to: [f64; 2], block: &Se2) -> [f64; 2] {
        let g = self.geometry.as_ref().expect("geometry initialized");
        let local = |p: [f64; 2]| rotate(sub(p, [block.x, block.y]), -block.theta);
        let (a, b) = (local(from), local(to));
        if g.clear_of_block(a, b, 0.002) {
            return to;
        }
        let radius = g.bound + g.pusher_radius + self.config.clearance;
        let center = [block.x, block.y];
        let rel = sub(from, center);
        let r = norm(rel);
        let phi = rel[1].atan2(rel[0]);
        if r < radius - 0.005 {
            return add(center, scale([phi.cos(), phi.sin()], radius));
        }
        let goal = sub(to, center);
        let dphi = wrap_angle(goal[1].atan2(goal[0]) - phi);
        let step = dphi.clamp(-0.5, 0.5);
        let ang = phi + step;
        add(center, scale([ang.cos(), ang.sin()], radius))
    }

    fn candidates(&self, block: &Se2) -> Vec<(f64, Push)> {
        let g = self.geometry.as_ref().expect("geometry initialized");
        let margin = 0.005;
        let ws = Rect::new(
            [self.workspace.min[0] + margin, self.workspace.min[1] + margin],
            [self.workspace.max[0] - margin, self.workspace.max[1] - margin],
        );
        let mut out = Vec::new();
        for &(touch, n) in &g.contacts {
            let start = add(touch, scale(n, self.config.standoff));
            if !ws.contains(block.apply(start)) {
                continue;
            }
            let contact = sub(touch, scale(n, g.pusher_radius));
            for &delta in &self.config.push_angles {
                let dir = rotate([-n[0], -n[1]], delta);
                let arm = cross(contact, dir);
                for &length in &self.config.push_lengths {
                    let end = add(touch, scale(dir, length));
                    if !ws.contains(block.apply(end)) {
                        continue;
                    }
                    let lambda = length * n.iter().zip(&[-dir[0], -dir[1]]).map(|(a, b)| a * b).sum::<f64>()
                        / (1.0 + arm * arm / g.c2);
                    let shift = rotate(scale(dir, lambda), block.theta);
                    let predicted = Se2::new(block.x + shift[0], block.y + shift[1], block.theta + lambda * arm / g.c2);
                    out.push((
                        self.cost(&predicted),
                        Push { start, dir, length },
                    ));
                }
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    /// Runs `push` on a copy of `world` with the pusher teleported to its
    /// start and returns the resulting cost.
    fn simulate(&self, world: &WorldState, push: &Push) -> Option<f64> {
        let block = tblock_se2(world);
        let start = block.apply(push.start);
        let dir = rotate(push.dir, block.theta);
        let mut sim = world.clone();
        let mut q = sim.robot.q.clone();
        q[0] = start[0];
        q[1] = start[1];
        sim.set_configuration(&q, &[]).ok()?;
        let total = self.config.standoff + push.length;
        let ticks = (total / (self.config.push_speed * sim.dt)).ceil() as usize + 10;
        let zero = CorrectiveInput::empty();
        for k in 1..=ticks {
            let s = (k as f64 * self.config.push_speed * sim.dt).min(total);
            let p = add(start, scale(dir, s));
            q[0] = p[0];
            q[1] = p[1];
            sim.set_joint_target(&q).ok()?;
            sim.step(&zero).ok()?;
        }
        Some(self.cost(&tblock_se2(&sim)))
    }

    fn plan(&self, world: &WorldState) -> Option<Push> {
        let block = tblock_se2(world);
        let current = self.cost(&block);
        let ranked = self.candidates(&block);
        let mut best: Option<(f64, Push)> = None;
        for chunk in [&ranked[..ranked.len().min(self.config.lookahead)], &ranked[ranked.len().min(self.config.lookahead)..ranked.len().min(4 * self.config.lookahead)]] {
            for (_, push) in chunk {
                if let Some(c) = self.simulate(world, push) {
                    if best.as_ref().is_none_or(|b| c < b.0) {
                        best = Some((c, *push));
                    }
                }
            }
            if best.as_ref().is_some_and(|b| b.0 < current - 1e-4) {
                break;
            }
        }
        best.map(|b| b.1)
    }
}
