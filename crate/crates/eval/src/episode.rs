//! Single evaluation episodes: controllers, success rules and stall
//! accounting.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;

use twinsim_core::demo::Frame;
use twinsim_core::math::Se2;
use twinsim_core::scene::{build_scene, tblock_se2, SceneConfig};
use twinsim_core::twin::{observation_seed, CorrectionGains, CoupledSystem, NoiseModel, Perturbation, ProxyWorld};
use twinsim_core::world::WorldState;
use twinsim_policy::{observe_world, sample_trajectory, Checkpoint, Normalizer, PolicyNet, RepresentationKind};

use crate::error::EvalError;
use crate::expert::ScriptedExpert;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Twin only, no corrections.
    Virtual,
    /// Twin coupled to a perturbed, noisy proxy standing in for the real setup.
    Coupled,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Virtual => "virtual",
            Self::Coupled => "coupled",
        })
    }
}

impl std::str::FromStr for EvalMode {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "virtual" => Ok(Self::Virtual),
            "coupled" => Ok(Self::Coupled),
            other => Err(EvalError::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuccessRule {
    /// The policy's progress estimate crosses the threshold.
    Progress,
    /// The T-block is within the SE(2) tolerance of the target.
    Geometric,
    /// Both of the above, each at some point of the episode.
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    /// Meters.
    pub position: f64,
    /// Radians.
    pub angle: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            position: 0.02,
            angle: 10f64.to_radians(),
        }
    }
}

/// Proxy parameters for coupled evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub perturbation: Perturbation,
    pub noise: NoiseModel,
    pub gains: CorrectionGains,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            perturbation: Perturbation {
                friction_scale: 1.2,
                mass_scale: 0.9,
                gain_scale: 1.0,
            },
            noise: NoiseModel::default(),
            gains: CorrectionGains::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub start_poses: Vec<Se2>,
    pub repeats: usize,
    pub max_seconds: f64,
    pub workers: usize,
    pub rule: SuccessRule,
    pub seed: u64,
    pub tolerance: Tolerance,
    pub progress_threshold: f64,
    pub euler_steps: usize,
    /// Waypoints executed from each plan before replanning; `None` runs the
    /// whole plan.
    pub execute: Option<usize>,
    /// Stall onset: block displacement below `stall_distance` for `stall_window` seconds.
    pub stall_window: f64,
    pub stall_distance: f64,
    pub coupling: CouplingConfig,
}

impl EvalConfig {
    pub fn new(mode: EvalMode, start_poses: Vec<Se2>) -> Self {
        Self {
            mode,
            start_poses,
            repeats: 3,
            max_seconds: 60.0,
            workers: 20,
            rule: SuccessRule::Geometric,
            seed: 0,
            tolerance: Tolerance::default(),
            progress_threshold: 0.9,
            euler_steps: twinsim_policy::DEFAULT_EULER_STEPS,
            execute: Some(16),
            stall_window: 5.0,
            stall_distance: 0.005,
            coupling: CouplingConfig::default(),
        }
    }

    pub fn episode_count(&self) -> usize {
        self.start_poses.len() * self.repeats
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.start_poses.is_empty() || self.repeats == 0 {
            return Err(EvalError::Config("no episodes".into()));
        }
        if self.workers == 0 {
            return Err(EvalError::Config("zero workers".into()));
        }
        if !(self.max_seconds > 0.0) || self.euler_steps == 0 || self.execute == Some(0) {
            return Err(EvalError::Config("non-positive episode length or step count".into()));
        }
        Ok(())
    }
}

/// Joint targets to execute, each held for `waypoint_dt` seconds, and the
/// controller's progress estimate at planning time.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub waypoints: Vec<Vec<f64>>,
    pub waypoint_dt: f64,
    pub progress: Option<f64>,
}

/// Anything that can drive the gantry through an episode. A fresh
/// controller is built per episode.
pub trait Controller {
    fn plan(&mut self, world: &WorldState, seed: u64) -> Result<Plan, EvalError>;
}

/// A trained (or untrained) checkpoint sampled with Euler integration.
#[derive(Clone, Debug)]
pub struct PolicyController {
    pub net: PolicyNet,
    pub normalizer: Normalizer,
    pub kind: RepresentationKind,
    pub scene: SceneConfig,
    pub euler_steps: usize,
}

impl PolicyController {
    pub fn from_checkpoint(ckpt: &Checkpoint, scene: &SceneConfig, euler_steps: usize) -> Result<Self, EvalError> {
        Ok(Self {
            net: ckpt.to_net()?,
            normalizer: ckpt.normalizer.clone(),
            kind: ckpt.kind(),
            scene: scene.clone(),
            euler_steps,
        })
    }
}

impl Controller for PolicyController {
    fn plan(&mut self, world: &WorldState, seed: u64) -> Result<Plan, EvalError> {
        let obs = observe_world(self.kind, &self.scene, world)?;
        let traj = sample_trajectory(&self.net, &self.normalizer, &obs, self.euler_steps, seed)?;
        Ok(Plan {
            waypoint_dt: traj.horizon / traj.m() as f64,
            progress: traj.progress.first().copied(),
            waypoints: traj.q,
        })
    }
}

/// The scripted expert, replanned every tick.
#[derive(Clone, Debug)]
pub struct ExpertController(pub ScriptedExpert);

impl Controller for ExpertController {
    fn plan(&mut self, world: &WorldState, _seed: u64) -> Result<Plan, EvalError> {
        Ok(Plan {
            waypoints: vec![self.0.act(world)],
            waypoint_dt: world.dt,
            progress: None,
        })
    }
}

/// True iff the T-block is within `tol` of `target`.
pub fn geometric_success(world: &WorldState, target: &Se2, tol: &Tolerance) -> bool {
    let (dp, dth) = tblock_se2(world).distance(target);
    dp <= tol.position && dth <= tol.angle
}

/// Per-episode seed, independent of mode and worker assignment.
pub fn episode_seed(seed: u64, pose_id: usize, repeat: usize) -> u64 {
    observation_seed(observation_seed(seed, pose_id as u64), repeat as u64)
}

/// `count` start poses from the scene's start region, each at least
/// (2 cm or 15°) away from every pose in `exclude`.
pub fn start_poses(scene: &SceneConfig, count: usize, seed: u64, exclude: &[Se2]) -> Vec<Se2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let pose = scene.sample_start_pose(&mut rng);
        let clashes = exclude.iter().any(|e| {
            let (dp, dth) = pose.distance(e);
            dp < 0.02 && dth < PI / 12.0
        });
        if !clashes {
            out.push(pose);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub pose_id: usize,
    pub repeat: usize,
    pub seed: u64,
    /// Success under the configured rule.
    pub success: bool,
    pub progress_success: bool,
    pub geometric_success: bool,
    /// Simulated seconds until termination.
    pub length: f64,
    /// Seconds from stall onset to the end of the episode (0 without a stall).
    pub stall_time: f64,
    /// `(time, progress)` at every planning point that reported progress.
    pub progress: Vec<(f64, f64)>,
    /// Final SE(2) error of the judged block: meters, radians.
    pub final_error: (f64, f64),
    /// State the episode ended in (the proxy's in coupled mode).
    pub terminal: Frame,
    /// Why the episode stopped early without success, if it did.
    pub failure: Option<String>,
}

/// Seconds from stall onset to the end of `track`, a block position series
/// sampled every `dt` seconds. Onset is the earliest sample from which the
/// block never leaves a `distance` ball around that sample's position,
/// provided that lasts at least `window` seconds.
pub fn stall_time(track: &[[f64; 2]], dt: f64, window: f64, distance: f64) -> f64 {
    if track.is_empty() {
        return 0.0;
    }
    let n = track.len();
    let mut onset = n - 1;
    for s in (0..n - 1).rev() {
        let r = track[s];
        if track[s..].iter().all(|p| (p[0] - r[0]).hypot(p[1] - r[1]) < distance) {
            onset = s;
        } else {
            break;
        }
    }
    let stalled = (n - 1 - onset) as f64 * dt;
    if stalled + 1e-9 >= window {
        stalled
    } else {
        0.0
    }
}

const STALL_SAMPLE: f64 = 0.1;

/// What happened in one episode.
#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub progress_success: bool,
    pub geometric_success: bool,
    pub length: f64,
    pub stall_time: f64,
    pub progress: Vec<(f64, f64)>,
    /// The judged world at the end: the proxy in coupled mode, else the twin.
    pub terminal: WorldState,
    pub failure: Option<String>,
}

/// Runs one episode from `start`, replanning whenever the current plan has
/// been executed, until the success rule fires or time runs out.
pub fn run_episode<C: Controller>(
    controller: &mut C,
    start: WorldState,
    target: &Se2,
    config: &EvalConfig,
    seed: u64,
) -> Result<EpisodeOutcome, EvalError> {
    let mut sys = match config.mode {
        EvalMode::Virtual => CoupledSystem::offline(start),
        EvalMode::Coupled => {
            let c = config.coupling;
            let proxy = ProxyWorld::from_twin(&start, c.perturbation, c.noise);
            CoupledSystem::online(start, proxy, c.gains)?
        }
    };
    let judged = |sys: &CoupledSystem| -> WorldState {
        match sys.proxy() {
            Some(p) => p.world.clone(),
            None => sys.twin.clone(),
        }
    };
    let judged_se2 = |sys: &CoupledSystem| match sys.proxy() {
        Some(p) => tblock_se2(&p.world),
        None => tblock_se2(&sys.twin),
    };
    let tol = config.tolerance;
    let dt = sys.twin.dt;
    let max_ticks = (config.max_seconds / dt).round() as usize;
    let sample_every = ((STALL_SAMPLE / dt).round() as usize).max(1);
    let mut track = Vec::new();
    let mut progress_series = Vec::new();
    let (mut progress_hit, mut geometric_hit) = (false, false);
    let mut failure = None;
    let mut plan: Option<(Plan, usize)> = None;
    let mut plans = 0u64;
    let mut tick = 0usize;
    let done = |p: bool, g: bool| match config.rule {
        SuccessRule::Progress => p,
        SuccessRule::Geometric => g,
        SuccessRule::Both => p && g,
    };
    loop {
        let pose = judged_se2(&sys);
        if tick % sample_every == 0 {
            track.push([pose.x, pose.y]);
        }
        let (dp, dth) = pose.distance(target);
        if dp <= tol.position && dth <= tol.angle {
            geometric_hit = true;
        }
        if done(progress_hit, geometric_hit) || tick >= max_ticks {
            break;
        }
        let needs_plan = match &plan {
            None => true,
            Some((p, from)) => {
                let n = config.execute.map_or(p.waypoints.len(), |e| e.min(p.waypoints.len()));
                (tick - from) as f64 * dt >= n as f64 * p.waypoint_dt - 1e-9
            }
        };
        if needs_plan {
            let p = match controller.plan(&sys.twin, observation_seed(seed ^ 0x9c1a_4d2e, plans)) {
                Ok(p) => p,
                Err(e) => {
                    failure = Some(format!("controller failed: {e}"));
                    break;
                }
            };
            plans += 1;
            if let Some(pr) = p.progress {
                progress_series.push((tick as f64 * dt, pr));
                if pr >= config.progress_threshold {
                    progress_hit = true;
                }
            }
            if p.waypoints.is_empty() {
                return Err(EvalError::Config("controller returned an empty plan".into()));
            }
            plan = Some((p, tick));
            if done(progress_hit, geometric_hit) {
                break;
            }
        }
        let (p, from) = plan.as_ref().expect("plan set above");
        let elapsed = (tick - from + 1) as f64 * dt;
        let k = ((elapsed / p.waypoint_dt - 1e-9).ceil() as usize).clamp(1, p.waypoints.len()) - 1;
        if let Err(e) = sys.coupled_step(&p.waypoints[k], seed) {
            failure = Some(format!("simulation failed: {e}"));
            tick += 1;
            break;
        }
        tick += 1;
    }
    let length = tick as f64 * dt;
    let pose = judged_se2(&sys);
    if tick % sample_every != 0 {
        track.push([pose.x, pose.y]);
    }
    let stall = stall_time(&track, STALL_SAMPLE, config.stall_window, config.stall_distance);
    Ok(EpisodeOutcome {
        progress_success: progress_hit,
        geometric_success: geometric_hit,
        length,
        stall_time: stall,
        progress: progress_series,
        terminal: judged(&sys),
        failure,
    })
}

/// Builds the start world for `pose`, runs the episode and packages the
/// record.
pub fn evaluate_episode<C: Controller>(
    controller: &mut C,
    scene: &SceneConfig,
    config: &EvalConfig,
    pose_id: usize,
    repeat: usize,
) -> Result<EpisodeRecord, EvalError> {
    let mut cfg = scene.clone();
    cfg.tblock.initial = Some(config.start_poses[pose_id]);
    let start = build_scene(&cfg, 0)?;
    let seed = episode_seed(config.seed, pose_id, repeat);
    let target = scene.target();
    let out = run_episode(controller, start, &target, config, seed)?;
    let success = match config.rule {
        SuccessRule::Progress => out.progress_success,
        SuccessRule::Geometric => out.geometric_success,
        SuccessRule::Both => out.progress_success && out.geometric_success,
    };
    let failure = if success {
        None
    } else {
        Some(out.failure.unwrap_or_else(|| "timeout".to_string()))
    };
    Ok(EpisodeRecord {
        pose_id,
        repeat,
        seed,
        success,
        progress_success: out.progress_success,
        geometric_success: out.geometric_success,
        length: out.length,
        stall_time: out.stall_time,
        progress: out.progress,
        final_error: tblock_se2(&out.terminal).distance(&target),
        terminal: Frame::from_world(&out.terminal),
        failure,
    })
}
