//! Digital-twin coupling.
//!
//! The twin is a [`WorldState`] that the policy drives. A [`ProxyWorld`]
//! stands in for the physical setup: an independently parameterized
//! simulation whose robot follows the twin's joint positions and whose
//! objects are only seen through noisy, latent, occasionally dropped pose
//! observations. [`compute_correction`] turns those observations into
//! virtual wrenches that pull the twin's objects toward the proxy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::body::BodyId;
use crate::error::TwinError;
use crate::math::{rotation_error, Pose, Quat, Vec3};
use crate::robot::RobotState;
use crate::world::WorldState;

/// Virtual force/torque on one object.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub body: BodyId,
    pub force: Vec3,
    pub torque: Vec3,
}

/// Per-object corrective wrenches for one physics step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrectiveInput {
    pub entries: Vec<Wrench>,
}

impl CorrectiveInput {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.entries
            .iter()
            .all(|w| w.force.iter().chain(w.torque.iter()).all(|v| *v == 0.0))
    }

    pub fn max_force(&self) -> f64 {
        self.entries.iter().map(|w| w.force.norm()).fold(0.0, f64::max)
    }

    pub fn max_torque(&self) -> f64 {
        self.entries.iter().map(|w| w.torque.norm()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Per-axis position noise (m).
    pub position_sigma: f64,
    /// Per-axis rotation-vector noise (rad).
    pub angle_sigma: f64,
    /// Per-axis noise on the tracker's velocity estimate (m/s).
    pub velocity_sigma: f64,
    /// Per-axis noise on the tracker's angular velocity estimate (rad/s).
    pub angular_velocity_sigma: f64,
    /// Probability that an object is missing from an observation.
    pub dropout: f64,
    /// Observation delay in physics ticks.
    pub latency_ticks: usize,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            position_sigma: 0.002,
            angle_sigma: 1f64.to_radians(),
            velocity_sigma: 0.01,
            angular_velocity_sigma: 0.05,
            dropout: 0.02,
            latency_ticks: 1,
        }
    }
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self {
            position_sigma: 0.0,
            angle_sigma: 0.0,
            velocity_sigma: 0.0,
            angular_velocity_sigma: 0.0,
            dropout: 0.0,
            latency_ticks: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedObject {
    pub id: BodyId,
    pub pose: Pose,
    pub linear_velocity: Vec3,
    pub angular_velocity: Vec3,
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub timestamp: f64,
    pub rate: f64,
    pub objects: Vec<ObservedObject>,
}

/// How the proxy robot follows the twin.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FollowerMode {
    /// The proxy's own PD controller tracks the twin's measured `q`.
    #[default]
    Pd,
    /// Ideal zero-lag replica: the proxy robot reproduces the twin robot's
    /// state and command exactly. Only meaningful for a gap-free proxy.
    Mirror,
}

/// Multiplicative changes applied to the proxy's physical parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub friction_scale: f64,
    pub mass_scale: f64,
    pub gain_scale: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self::none()
    }
}

impl Perturbation {
    pub fn none() -> Self {
        Self {
            friction_scale: 1.0,
            mass_scale: 1.0,
            gain_scale: 1.0,
        }
    }
}

type ObjectSample = (BodyId, Pose, Vec3, Vec3);

/// Simulated stand-in for the physical system.
#[derive(Clone, Debug)]
pub struct ProxyWorld {
    pub world: WorldState,
    pub noise: NoiseModel,
    pub follower: FollowerMode,
    pub observation_rate: f64,
    history: VecDeque<(f64, Vec<ObjectSample>)>,
}

impl ProxyWorld {
    /// Clones `twin` and perturbs the object masses/frictions and the robot
    /// joint gains.
    pub fn from_twin(twin: &WorldState, perturbation: Perturbation, noise: NoiseModel) -> Self {
        let mut world = twin.clone();
        let links = world.robot_model.links.clone();
        for b in &mut world.bodies {
            b.friction *= perturbation.friction_scale;
            if !links.contains(&b.id) {
                b.mass *= perturbation.mass_scale;
                b.inertia *= perturbation.mass_scale;
            }
        }
        if let Some(t) = &mut world.table {
            t.friction *= perturbation.friction_scale;
        }
        for j in &mut world.robot_model.joints {
            j.gains.kp *= perturbation.gain_scale;
            j.gains.kd *= perturbation.gain_scale;
        }
        let mut proxy = Self {
            world,
            noise,
            follower: FollowerMode::Pd,
            observation_rate: 30.0,
            history: VecDeque::new(),
        };
        proxy.record_history();
        proxy
    }

    fn record_history(&mut self) {
        let sample: Vec<ObjectSample> = self
            .world
            .objects()
            .map(|b| (b.id, b.pose, b.linear_velocity, b.angular_velocity))
            .collect();
        self.history.push_back((self.world.time, sample));
        while self.history.len() > self.noise.latency_ticks + 1 {
            self.history.pop_front();
        }
    }

    /// Steps the proxy's own physics (no corrective input).
    pub fn step(&mut self) -> Result<(), TwinError> {
        self.world.step(&crate::twin::CorrectiveInput::empty())?;
        self.record_history();
        Ok(())
    }

    /// Ground-truth object poses perturbed by the noise model. Deterministic
    /// in `seed`.
    pub fn observe(&self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (timestamp, sample) = self.history.front().expect("history is never empty");
        let n = self.noise;
        let objects = sample
            .iter()
            .map(|&(id, pose, v, w)| {
                let valid = !(n.dropout > 0.0 && rng.random::<f64>() < n.dropout);
                let mut pose = pose;
                let (mut v, mut w) = (v, w);
                if n.position_sigma > 0.0 {
                    pose.position += gaussian3(&mut rng, n.position_sigma);
                }
                if n.angle_sigma > 0.0 {
                    let d = gaussian3(&mut rng, n.angle_sigma);
                    pose.orientation = Quat::from_scaled_axis(d) * pose.orientation;
                }
                if n.velocity_sigma > 0.0 {
                    v += gaussian3(&mut rng, n.velocity_sigma);
                }
                if n.angular_velocity_sigma > 0.0 {
                    w += gaussian3(&mut rng, n.angular_velocity_sigma);
                }
                ObservedObject {
                    id,
                    pose,
                    linear_velocity: v,
                    angular_velocity: w,
                    valid,
                }
            })
            .collect();
        Observation {
            timestamp: *timestamp,
            rate: self.observation_rate,
            objects,
        }
    }
}

fn gaussian3<R: Rng>(rng: &mut R, sigma: f64) -> Vec3 {
    let d = Normal::new(0.0, sigma).expect("finite sigma");
    Vec3::new(d.sample(rng), d.sample(rng), d.sample(rng))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionGains {
    pub kp_lin: f64,
    pub kd_lin: f64,
    pub kp_rot: f64,
    pub kd_rot: f64,
    pub force_cap: f64,
    pub torque_cap: f64,
}

impl Default for CorrectionGains {
    fn default() -> Self {
        Self {
            // Observations arrive at 30 Hz with a tick of latency, so the loop
            // sees roughly 40 ms of delay. Natural frequencies stay near 15 rad/s
            // (linear) and 11 rad/s (yaw, I_z ~ 1.7e-4) to keep the phase lag small.
            kp_lin: 30.0,
            kd_lin: 2.0,
            kp_rot: 0.02,
            kd_rot: 0.001,
            force_cap: 2.0,
            torque_cap: 0.02,
        }
    }
}

fn cap(v: Vec3, limit: f64) -> Vec3 {
    let n = v.norm();
    if n > limit {
        v * (limit / n)
    } else {
        v
    }
}

/// Pose-feedback wrenches pulling twin objects toward the observation.
///
/// The damping terms act on the velocity error against the tracker's
/// estimate, so a twin that matches a moving observation exactly receives
/// exactly zero wrench. Robot links are never corrected; invalid or unknown
/// objects get a zero wrench.
pub fn compute_correction(twin: &WorldState, obs: &Observation, gains: &CorrectionGains) -> CorrectiveInput {
    let mut entries = Vec::with_capacity(obs.objects.len());
    for o in &obs.objects {
        if twin.is_robot_link(o.id) {
            continue;
        }
        let Some(body) = twin.body(o.id) else {
            continue;
        };
        if !o.valid {
            entries.push(Wrench {
                body: o.id,
                force: Vec3::zeros(),
                torque: Vec3::zeros(),
            });
            continue;
        }
        let e_p = o.pose.position - body.pose.position;
        let e_v = o.linear_velocity - body.linear_velocity;
        let force = cap(e_p * gains.kp_lin + e_v * gains.kd_lin, gains.force_cap);
        let e_r = rotation_error(&o.pose.orientation, &body.pose.orientation);
        let e_w = o.angular_velocity - body.angular_velocity;
        let torque = cap(e_r * gains.kp_rot + e_w * gains.kd_rot, gains.torque_cap);
        entries.push(Wrench {
            body: o.id,
            force,
            torque,
        });
    }
    CorrectiveInput { entries }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Online,
    Offline,
}

/// Twin plus optional proxy. Offline means the proxy is absent and every
/// corrective input is zero.
#[derive(Clone, Debug)]
pub struct CoupledSystem {
    pub twin: WorldState,
    proxy: Option<ProxyWorld>,
    pub gains: CorrectionGains,
    /// When false the proxy still follows but the twin is never corrected.
    pub correction_enabled: bool,
    held: CorrectiveInput,
    tick: u64,
    mirror_source: Option<(Vec<(BodyId, Pose, Vec3, Vec3)>, RobotState)>,
}

impl CoupledSystem {
    pub fn offline(twin: WorldState) -> Self {
        Self {
            twin,
            proxy: None,
            gains: CorrectionGains::default(),
            correction_enabled: true,
            held: CorrectiveInput::empty(),
            tick: 0,
            mirror_source: None,
        }
    }

    pub fn online(twin: WorldState, proxy: ProxyWorld, gains: CorrectionGains) -> Result<Self, TwinError> {
        let mut s = Self::offline(twin);
        s.gains = gains;
        s.attach(proxy)?;
        Ok(s)
    }

    pub fn mode(&self) -> Mode {
        if self.proxy.is_some() {
            Mode::Online
        } else {
            Mode::Offline
        }
    }

    pub fn proxy(&self) -> Option<&ProxyWorld> {
        self.proxy.as_ref()
    }

    pub fn proxy_mut(&mut self) -> Option<&mut ProxyWorld> {
        self.proxy.as_mut()
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Corrective input currently held between observations.
    pub fn held_correction(&self) -> &CorrectiveInput {
        &self.held
    }

    /// Connects a proxy: switches to online mode.
    pub fn attach(&mut self, proxy: ProxyWorld) -> Result<(), TwinError> {
        let ids = |w: &WorldState| w.bodies.iter().map(|b| b.id).collect::<Vec<_>>();
        if ids(&proxy.world) != ids(&self.twin) {
            return Err(TwinError::Topology("body ids differ".into()));
        }
        if proxy.world.robot_model.links != self.twin.robot_model.links {
            return Err(TwinError::Topology("robot links differ".into()));
        }
        self.proxy = Some(proxy);
        Ok(())
    }

    /// Disconnects the proxy: switches to offline mode.
    pub fn detach(&mut self) -> Option<ProxyWorld> {
        self.held = CorrectiveInput::empty();
        self.proxy.take()
    }

    fn ticks_per_observation(&self, proxy: &ProxyWorld) -> u64 {
        ((1.0 / (self.twin.dt * proxy.observation_rate)).round() as u64).max(1)
    }

    fn twin_robot_snapshot(&self) -> (Vec<(BodyId, Pose, Vec3, Vec3)>, RobotState) {
        let links = self
            .twin
            .robot_model
            .links
            .iter()
            .map(|id| {
                let b = self.twin.body(*id).expect("validated link");
                (b.id, b.pose, b.linear_velocity, b.angular_velocity)
            })
            .collect();
        (links, self.twin.robot.clone())
    }

    /// The proxy robot tracks the twin's measured joint positions, then the
    /// proxy advances one tick with its own physics.
    pub fn follower_tick(&mut self) -> Result<(), TwinError> {
        let source = self
            .mirror_source
            .take()
            .unwrap_or_else(|| self.twin_robot_snapshot());
        let q = self.twin.robot.q.clone();
        let proxy = self.proxy.as_mut().ok_or(TwinError::Offline)?;
        match proxy.follower {
            FollowerMode::Pd => proxy.world.set_joint_target(&q)?,
            FollowerMode::Mirror => {
                let (links, robot) = source;
                for (id, pose, v, w) in links {
                    let b = proxy.world.body_mut(id).ok_or(crate::error::PhysicsError::UnknownBody(id))?;
                    b.pose = pose;
                    b.linear_velocity = v;
                    b.angular_velocity = w;
                }
                proxy.world.robot = robot;
            }
        }
        proxy.step()
    }

    /// One 60 Hz tick of the coupled loop.
    ///
    /// Online: command the twin, refresh the correction at the observation
    /// rate (held in between), step the twin, then let the proxy follow.
    /// Offline: command and step the twin with zero correction.
    pub fn coupled_step(&mut self, q_prime: &[f64], seed: u64) -> Result<(), TwinError> {
        self.twin.set_joint_target(q_prime)?;
        if let Some(proxy) = &self.proxy {
            if self.tick % self.ticks_per_observation(proxy) == 0 {
                self.held = if self.correction_enabled {
                    let obs = proxy.observe(observation_seed(seed, self.tick));
                    compute_correction(&self.twin, &obs, &self.gains)
                } else {
                    CorrectiveInput::empty()
                };
            }
            if proxy.follower == FollowerMode::Mirror {
                self.mirror_source = Some(self.twin_robot_snapshot());
            }
            self.twin.step(&self.held)?;
            self.follower_tick()?;
        } else {
            self.twin.step(&CorrectiveInput::empty())?;
        }
        self.tick += 1;
        Ok(())
    }

    /// RMS object position error between twin and proxy (m).
    pub fn sync_error(&self) -> Result<f64, TwinError> {
        let proxy = self.proxy.as_ref().ok_or(TwinError::Offline)?;
        Ok(sync_error(&self.twin, &proxy.world))
    }
}

/// RMS positional discrepancy over the objects of two worlds.
pub fn sync_error(a: &WorldState, b: &WorldState) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for obj in a.objects() {
        if let Some(other) = b.body(obj.id) {
            sum += (obj.pose.position - other.pose.position).norm_squared();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Mixes a session seed with a tick index (SplitMix64 finalizer).
pub fn observation_seed(seed: u64, tick: u64) -> u64 {
    let mut z = seed ^ tick.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
