//! Parallel evaluation, reports, checkpoint sweeps, representation
//! comparisons and failure harvesting.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use twinsim_core::demo::Frame;
use twinsim_core::math::Se2;
use twinsim_core::scene::{SceneConfig, TBLOCK_ID};
use twinsim_policy::{train, Checkpoint, RepresentationKind, TrainConfig, TrainingSet};

use crate::episode::{evaluate_episode, Controller, EpisodeRecord, EvalConfig, EvalMode, PolicyController, SuccessRule, Tolerance};
use crate::error::EvalError;
use crate::stats::{confidence_interval, spearman};

pub const CONFIDENCE_LEVEL: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub label: String,
    pub mode: EvalMode,
    pub rule: SuccessRule,
    pub tolerance: Tolerance,
    pub progress_threshold: f64,
    pub workers: usize,
    pub seed: u64,
    pub episodes: Vec<EpisodeRecord>,
    pub successes: usize,
    pub rate: f64,
    pub ci: (f64, f64),
    pub wallclock_s: f64,
}

impl SuccessReport {
    /// Aggregates episode records (already ordered by pose, then repeat).
    pub fn from_episodes(label: &str, config: &EvalConfig, episodes: Vec<EpisodeRecord>, wallclock_s: f64) -> Result<Self, EvalError> {
        let successes = episodes.iter().filter(|e| e.success).count();
        let n = episodes.len();
        let ci = confidence_interval(successes, n, CONFIDENCE_LEVEL)?;
        Ok(Self {
            label: label.to_string(),
            mode: config.mode,
            rule: config.rule,
            tolerance: config.tolerance,
            progress_threshold: config.progress_threshold,
            workers: config.workers,
            seed: config.seed,
            rate: successes as f64 / n as f64,
            successes,
            ci,
            episodes,
            wallclock_s,
        })
    }

    /// Per-episode outcomes without timing, for cross-run comparisons.
    pub fn outcomes(&self) -> Vec<(usize, usize, bool, bool, bool)> {
        self.episodes
            .iter()
            .map(|e| (e.pose_id, e.repeat, e.success, e.progress_success, e.geometric_success))
            .collect()
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.4},{:.4},{:.4},{:.3}",
            self.label, self.mode, self.rate, self.ci.0, self.ci.1, self.wallclock_s
        )
    }
}

pub const CSV_HEADER: &str = "checkpoint,mode,rate,ci_lo,ci_hi,wallclock_s";

pub fn summary_csv<'a, I: IntoIterator<Item = &'a SuccessReport>>(reports: I) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in reports {
        writeln!(s, "{}", r.csv_row()).expect("write to string");
    }
    s
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<(), EvalError> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, EvalError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Runs every (pose, repeat) episode on a pool of `config.workers` threads.
/// `make` builds a fresh controller per episode. Results are ordered by pose
/// then repeat regardless of scheduling.
pub fn evaluate<F, C>(make: F, scene: &SceneConfig, config: &EvalConfig, label: &str) -> Result<SuccessReport, EvalError>
where
    F: Fn() -> Result<C, EvalError> + Sync,
    C: Controller,
{
    config.validate()?;
    let tasks: Vec<(usize, usize)> = (0..config.start_poses.len())
        .flat_map(|p| (0..config.repeats).map(move |r| (p, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    let started = Instant::now();
    let episodes = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(pose, repeat)| {
                let mut controller = make()?;
                evaluate_episode(&mut controller, scene, config, pose, repeat)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    SuccessReport::from_episodes(label, config, episodes, started.elapsed().as_secs_f64())
}

/// Evaluates a checkpoint.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, scene: &SceneConfig, config: &EvalConfig, label: &str) -> Result<SuccessReport, EvalError> {
    let base = PolicyController::from_checkpoint(ckpt, scene, config.euler_steps)?;
    evaluate(|| Ok(base.clone()), scene, config, label)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub label: String,
    pub step: usize,
    #[serde(rename = "virtual")]
    pub virtual_report: SuccessReport,
    pub coupled: SuccessReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    /// Rank correlation between the virtual and coupled success rates.
    pub spearman: Option<f64>,
}

impl SweepReport {
    pub fn from_entries(entries: Vec<SweepEntry>) -> Self {
        let v: Vec<f64> = entries.iter().map(|e| e.virtual_report.rate).collect();
        let c: Vec<f64> = entries.iter().map(|e| e.coupled.rate).collect();
        Self {
            spearman: spearman(&v, &c),
            entries,
        }
    }

    pub fn csv(&self) -> String {
        summary_csv(self.entries.iter().flat_map(|e| [&e.virtual_report, &e.coupled]))
    }

    /// Entry with the highest coupled success rate (earliest on ties).
    pub fn best(&self) -> Option<&SweepEntry> {
        self.entries
            .iter()
            .fold(None, |best: Option<&SweepEntry>, e| match best {
                Some(b) if b.coupled.rate >= e.coupled.rate => Some(b),
                _ => Some(e),
            })
    }
}

/// Evaluates every checkpoint in both modes on identical start poses.
pub fn checkpoint_sweep(
    checkpoints: &[(String, Checkpoint)],
    scene: &SceneConfig,
    virtual_config: &EvalConfig,
    coupled_config: &EvalConfig,
) -> Result<SweepReport, EvalError> {
    if checkpoints.len() < 2 {
        return Err(EvalError::Config("a sweep needs at least two checkpoints".into()));
    }
    if virtual_config.start_poses != coupled_config.start_poses || virtual_config.repeats != coupled_config.repeats {
        return Err(EvalError::Config("virtual and coupled runs must share start poses".into()));
    }
    if virtual_config.mode != EvalMode::Virtual || coupled_config.mode != EvalMode::Coupled {
        return Err(EvalError::Config("sweep configs must be virtual then coupled".into()));
    }
    let mut entries = Vec::with_capacity(checkpoints.len());
    for (label, ckpt) in checkpoints {
        entries.push(SweepEntry {
            label: label.clone(),
            step: ckpt.step,
            virtual_report: evaluate_checkpoint(ckpt, scene, virtual_config, label)?,
            coupled: evaluate_checkpoint(ckpt, scene, coupled_config, label)?,
        });
    }
    Ok(SweepReport::from_entries(entries))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationEntry {
    pub kind: RepresentationKind,
    pub train_wallclock_s: f64,
    pub final_loss: Option<f64>,
    pub report: SuccessReport,
    /// Rate of a second evaluation with a different seed, and whether it
    /// falls inside the first evaluation's interval.
    pub recheck: Option<(f64, bool)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub demos: usize,
    pub pairs: usize,
    pub entries: Vec<RepresentationEntry>,
}

impl ComparisonReport {
    pub fn csv(&self) -> String {
        summary_csv(self.entries.iter().map(|e| &e.report))
    }
}

/// Training configuration for one representation kind.
pub struct RepresentationPlan<'a> {
    pub kind: RepresentationKind,
    pub train: &'a TrainConfig,
}

/// Trains one policy per kind from the same pairs and evaluates each.
/// Returns the report and the trained checkpoints (last of each schedule).
pub fn compare_representations(
    pairs: &[twinsim_core::demo::TrainingPair],
    demos: usize,
    scene: &SceneConfig,
    plans: &[RepresentationPlan],
    config: &EvalConfig,
    recheck_seed: Option<u64>,
) -> Result<(ComparisonReport, Vec<Checkpoint>), EvalError> {
    let mut entries = Vec::new();
    let mut checkpoints = Vec::new();
    for plan in plans {
        let set = TrainingSet::new(plan.kind, scene, pairs)?;
        let started = Instant::now();
        let outcome = train(&set, plan.train)?;
        let train_wallclock_s = started.elapsed().as_secs_f64();
        let ckpt = outcome
            .last()
            .cloned()
            .ok_or_else(|| EvalError::Config("training schedule emitted no checkpoint".into()))?;
        let label = plan.kind.to_string();
        let report = evaluate_checkpoint(&ckpt, scene, config, &label)?;
        let recheck = match recheck_seed {
            Some(seed) => {
                let again = evaluate_checkpoint(&ckpt, scene, &EvalConfig { seed, ..config.clone() }, &label)?;
                Some((again.rate, again.rate >= report.ci.0 && again.rate <= report.ci.1))
            }
            None => None,
        };
        entries.push(RepresentationEntry {
            kind: plan.kind,
            train_wallclock_s,
            final_loss: outcome.log.last().map(|r| r.loss_ema),
            report,
            recheck,
        });
        checkpoints.push(ckpt);
    }
    Ok((
        ComparisonReport {
            demos,
            pairs: pairs.len(),
            entries,
        },
        checkpoints,
    ))
}

/// A failed episode's end state, queued for a targeted re-demonstration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureState {
    pub pose_id: usize,
    pub repeat: usize,
    pub stall_time: f64,
    pub block: Se2,
    pub terminal: Frame,
}

/// Default failure dedup radius: meters, radians.
pub const DEDUP_POSITION: f64 = 0.02;
pub const DEDUP_ANGLE: f64 = 15.0 * std::f64::consts::PI / 180.0;

/// Failed episodes ordered by stall time (longest first), dropping any whose
/// terminal block pose is within `(position, angle)` of one already kept.
pub fn harvest_failures(report: &SuccessReport, position: f64, angle: f64) -> Vec<FailureState> {
    let mut failed: Vec<&EpisodeRecord> = report.episodes.iter().filter(|e| !e.success).collect();
    failed.sort_by(|a, b| {
        b.stall_time
            .total_cmp(&a.stall_time)
            .then(a.pose_id.cmp(&b.pose_id))
            .then(a.repeat.cmp(&b.repeat))
    });
    let mut out: Vec<FailureState> = Vec::new();
    for e in failed {
        let Some(obj) = e.terminal.objects.iter().find(|o| o.id == TBLOCK_ID) else {
            continue;
        };
        let block = Se2::from_pose(&obj.pose);
        let duplicate = out.iter().any(|f| {
            let (dp, dth) = f.block.distance(&block);
            dp < position && dth < angle
        });
        if !duplicate {
            out.push(FailureState {
                pose_id: e.pose_id,
                repeat: e.repeat,
                stall_time: e.stall_time,
                block,
                terminal: e.terminal.clone(),
            });
        }
    }
    out
}
