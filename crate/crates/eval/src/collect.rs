//! Scripted demonstration collection in online (twin coupled to the proxy)
//! or offline (twin only) mode.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use twinsim_core::demo::{record, DemoSource, Demonstration};
use twinsim_core::math::Se2;
use twinsim_core::scene::{build_scene, tblock_se2, world_from_snapshot, SceneConfig};
use twinsim_core::twin::{CoupledSystem, Mode, ProxyWorld};
use twinsim_core::world::WorldState;

use crate::episode::{episode_seed, start_poses, CouplingConfig, Tolerance};
use crate::error::EvalError;
use crate::evaluate::FailureState;
use crate::expert::ScriptedExpert;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    pub mode: Mode,
    pub coupling: CouplingConfig,
    pub max_seconds: f64,
    pub tolerance: Tolerance,
    pub seed: u64,
}

impl CollectConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            coupling: CouplingConfig::default(),
            max_seconds: 60.0,
            tolerance: Tolerance::default(),
            seed: 0,
        }
    }
}

/// Twin/proxy discrepancy over an online demonstration (m).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncSummary {
    pub mean: f64,
    pub max: f64,
    pub last: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectedDemo {
    pub demo: Demonstration,
    pub start: Se2,
    pub sync: Option<SyncSummary>,
}

/// Seed of the demonstration start-pose stream.
pub const DEMO_POSE_SEED: u64 = 11;
/// Length of the demonstration start-pose stream kept clear of evaluation
/// poses. Collection walks this stream in order, skipping expert failures.
pub const DEMO_POSE_POOL: usize = 200;
/// Seed of the fixed evaluation pose set.
pub const EVAL_POSE_SEED: u64 = 99;

/// Start poses for demonstrations, drawn from the scene's start region.
pub fn demo_start_poses(scene: &SceneConfig, count: usize, seed: u64) -> Vec<Se2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| scene.sample_start_pose(&mut rng)).collect()
}

/// The fixed evaluation suite: `count` poses away from every pose of the
/// default demonstration stream.
pub fn evaluation_poses(scene: &SceneConfig, count: usize) -> Vec<Se2> {
    let exclude = demo_start_poses(scene, DEMO_POSE_POOL, DEMO_POSE_SEED);
    start_poses(scene, count, EVAL_POSE_SEED, &exclude)
}

fn mode_tag(mode: Mode) -> &'static str {
    match mode {
        Mode::Online => "online",
        Mode::Offline => "offline",
    }
}

/// Runs the expert from `start` and records every twin state until the
/// block (the proxy's in online mode) reaches the target. Returns `None`
/// when the expert runs out of time.
pub fn collect_from_world(
    start: WorldState,
    scene: &SceneConfig,
    config: &CollectConfig,
    seed: u64,
    tag: &str,
) -> Result<Option<CollectedDemo>, EvalError> {
    let target = scene.target();
    let first = tblock_se2(&start);
    let mut sys = match config.mode {
        Mode::Offline => CoupledSystem::offline(start),
        Mode::Online => {
            let c = config.coupling;
            let proxy = ProxyWorld::from_twin(&start, c.perturbation, c.noise);
            CoupledSystem::online(start, proxy, c.gains)?
        }
    };
    let mut expert = ScriptedExpert::new(target, scene.workspace());
    let mut states = vec![sys.twin.clone()];
    let mut sync = Vec::new();
    let max_ticks = (config.max_seconds / sys.twin.dt).round() as usize;
    let reached = |sys: &CoupledSystem| {
        let pose = match sys.proxy() {
            Some(p) => tblock_se2(&p.world),
            None => tblock_se2(&sys.twin),
        };
        let (dp, dth) = pose.distance(&target);
        dp <= config.tolerance.position && dth <= config.tolerance.angle
    };
    let mut success = reached(&sys);
    while !success && states.len() <= max_ticks {
        let q = expert.act(&sys.twin);
        sys.coupled_step(&q, seed)?;
        if sys.proxy().is_some() {
            sync.push(sys.sync_error()?);
        }
        states.push(sys.twin.clone());
        success = reached(&sys);
    }
    if !success || states.len() < 2 {
        return Ok(None);
    }
    let mut demo = record(scene, DemoSource::Scripted, &states)?;
    demo.header.tag = Some(tag.to_string());
    let sync = (!sync.is_empty()).then(|| SyncSummary {
        mean: sync.iter().sum::<f64>() / sync.len() as f64,
        max: sync.iter().copied().fold(0.0, f64::max),
        last: *sync.last().expect("non-empty"),
    });
    Ok(Some(CollectedDemo {
        demo,
        start: first,
        sync,
    }))
}

/// Collects up to `count` demos, trying start poses in order. Returns the
/// demos and the indices of start poses where the expert failed.
pub fn collect_demos(
    scene: &SceneConfig,
    starts: &[Se2],
    count: usize,
    config: &CollectConfig,
) -> Result<(Vec<CollectedDemo>, Vec<usize>), EvalError> {
    let mut demos = Vec::new();
    let mut failed = Vec::new();
    for (i, pose) in starts.iter().enumerate() {
        if demos.len() == count {
            break;
        }
        let mut cfg = scene.clone();
        cfg.tblock.initial = Some(*pose);
        let world = build_scene(&cfg, 0)?;
        match collect_from_world(world, scene, config, episode_seed(config.seed, i, 0), mode_tag(config.mode))? {
            Some(d) => demos.push(d),
            None => failed.push(i),
        }
    }
    Ok((demos, failed))
}

pub const AUGMENTATION_TAG: &str = "augmentation";

/// Re-demonstrations starting from harvested failure states.
pub fn collect_from_failures(
    scene: &SceneConfig,
    failures: &[FailureState],
    config: &CollectConfig,
) -> Result<(Vec<CollectedDemo>, Vec<usize>), EvalError> {
    let tag = format!("{},{AUGMENTATION_TAG}", mode_tag(config.mode));
    let mut demos = Vec::new();
    let mut failed = Vec::new();
    for (i, f) in failures.iter().enumerate() {
        let world = world_from_snapshot(scene, &f.terminal.q, &f.terminal.object_poses())?;
        match collect_from_world(world, scene, config, episode_seed(config.seed ^ 0xa5a5, i, 0), &tag)? {
            Some(d) => demos.push(d),
            None => failed.push(i),
        }
    }
    Ok((demos, failed))
}
