//! Subcommand implementations. Each one reads and writes artifacts under a
//! [`DataDir`] and returns the text to print.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

use twinsim_core::demo::{load_demo, load_demo_dir, save_demo, Dataset, Demonstration};
use twinsim_core::scene::SceneConfig;
use twinsim_core::twin::Mode;
use twinsim_eval::{
    checkpoint_sweep, collect_demos, collect_from_failures, compare_representations, demo_start_poses, evaluate_checkpoint,
    evaluation_poses, harvest_failures, load_json, save_json, summary_csv, CollectConfig, CollectedDemo, EvalConfig, EvalMode,
    FailureState, RepresentationPlan, SuccessReport, AUGMENTATION_TAG, DEDUP_ANGLE, DEDUP_POSITION, DEMO_POSE_POOL,
    DEMO_POSE_SEED,
};
use twinsim_policy::train::write_training_log;
use twinsim_policy::{load_checkpoint, save_checkpoint, train, Checkpoint, RepresentationKind, TrainConfig, TrainingSet};

use crate::paths::{checkpoint_steps, DataDir};

/// Action chunk length (s) and waypoint count.
pub const HORIZON: f64 = 1.0;
pub const WAYPOINTS: usize = 32;

pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Online => "online",
        Mode::Offline => "offline",
    }
}

/// Writes the default PushT scene to `scene.json`.
pub fn scene_build(data: &DataDir) -> Result<String> {
    let scene = SceneConfig::pusht();
    scene.validate()?;
    std::fs::create_dir_all(data.root())?;
    std::fs::write(data.scene(), scene.to_json())?;
    Ok(format!("wrote {} (digest {})\n", data.scene().display(), scene.digest()))
}

/// The scene in `scene.json`, or the default scene when none was built.
pub fn load_scene(data: &DataDir) -> Result<SceneConfig> {
    let path = data.scene();
    if !path.exists() {
        return Ok(SceneConfig::pusht());
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(SceneConfig::from_json(&text)?)
}

/// Collects `count` scripted demonstrations. File names depend only on the
/// mode and index, so re-running overwrites the same files.
pub fn collect_scripted(data: &DataDir, mode: Mode, count: usize, seed: u64) -> Result<String> {
    let scene = load_scene(data)?;
    let starts = demo_start_poses(&scene, DEMO_POSE_POOL.max(count), DEMO_POSE_SEED);
    let config = CollectConfig { seed, ..CollectConfig::new(mode) };
    let (demos, failed) = collect_demos(&scene, &starts, count, &config)?;
    std::fs::create_dir_all(data.demos())?;
    let mut summary = String::from("file,start_x,start_y,start_theta,duration_s,sync_mean,sync_max,sync_last\n");
    for (i, d) in demos.iter().enumerate() {
        let name = format!("scripted-{}-{i:04}.demo", mode_name(mode));
        save_demo(&d.demo, &data.demos().join(&name))?;
        summary_row(&mut summary, &name, d);
    }
    std::fs::write(data.collect_summary(), &summary)?;
    let mut out = summary;
    if demos.len() < count {
        writeln!(out, "warning: collected {} of {count} demos", demos.len())?;
    }
    if !failed.is_empty() {
        writeln!(out, "expert failed from {} start poses", failed.len())?;
    }
    Ok(out)
}

fn summary_row(out: &mut String, name: &str, d: &CollectedDemo) {
    let (mean, max, last) = match d.sync {
        Some(s) => (format!("{:.6}", s.mean), format!("{:.6}", s.max), format!("{:.6}", s.last)),
        None => Default::default(),
    };
    writeln!(
        out,
        "{name},{:.4},{:.4},{:.4},{:.3},{mean},{max},{last}",
        d.start.x,
        d.start.y,
        d.start.theta,
        d.demo.duration()
    )
    .expect("write to string");
}

fn demo_paths(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "demo"))
        .collect();
    paths.sort();
    Ok(paths)
}

/// One line per stored demonstration.
pub fn collect_list(data: &DataDir) -> Result<String> {
    let scene = load_scene(data)?;
    let mut out = String::from("file,source,tag,frames,duration_s\n");
    for path in demo_paths(&data.demos())? {
        let demo = load_demo(&path, Some(&scene)).with_context(|| format!("loading {}", path.display()))?;
        let source = serde_json::to_value(demo.header.source)?;
        writeln!(
            out,
            "{},{},{},{},{:.3}",
            path.file_name().unwrap_or_default().to_string_lossy(),
            source.as_str().unwrap_or_default(),
            demo.header.tag.as_deref().unwrap_or(""),
            demo.frames.len(),
            demo.duration()
        )?;
    }
    Ok(out)
}

pub fn is_augmentation(demo: &Demonstration) -> bool {
    demo.header
        .tag
        .as_deref()
        .is_some_and(|t| t.split(',').any(|part| part == AUGMENTATION_TAG))
}

fn load_demos(data: &DataDir, scene: &SceneConfig) -> Result<Vec<Demonstration>> {
    let dir = data.demos();
    if !dir.exists() {
        return Ok(Vec::new());
    }
    Ok(load_demo_dir(&dir, Some(scene))?)
}

#[derive(Clone, Debug)]
pub struct TrainArgs {
    pub kind: RepresentationKind,
    pub name: String,
    pub steps: usize,
    pub checkpoints: Vec<usize>,
    pub seed: u64,
    pub with_augmentation: bool,
}

/// Trains on every stored demo and saves each scheduled checkpoint plus the
/// loss log under `checkpoints/<name>/`.
pub fn train_policy(data: &DataDir, args: &TrainArgs) -> Result<String> {
    let scene = load_scene(data)?;
    let mut demos = load_demos(data, &scene)?;
    if !args.with_augmentation {
        demos.retain(|d| !is_augmentation(d));
    }
    if demos.is_empty() {
        bail!("empty dataset: no demonstrations in {}", data.demos().display());
    }
    let dataset = Dataset::from_demos(&demos, HORIZON, WAYPOINTS)?;
    let set = TrainingSet::new(args.kind, &scene, &dataset.pairs)?;
    let config = TrainConfig {
        steps: args.steps,
        checkpoints: args.checkpoints.clone(),
        seed: args.seed,
        ..TrainConfig::default()
    };
    let outcome = train(&set, &config)?;
    let dir = data.checkpoints(&args.name);
    std::fs::create_dir_all(&dir)?;
    let mut out = format!("trained {} on {} demos ({} pairs)\n", args.kind, dataset.demo_count(), dataset.pairs.len());
    for ckpt in &outcome.checkpoints {
        let path = data.checkpoint(&args.name, ckpt.step);
        save_checkpoint(ckpt, &path)?;
        writeln!(out, "{}", path.display())?;
    }
    write_training_log(&outcome.log, &dir.join("train_log.csv"))?;
    if let Some(row) = outcome.log.last() {
        writeln!(out, "final loss {:.4}", row.loss_ema)?;
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub envs: usize,
    pub poses: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl EvalArgs {
    fn config(&self, scene: &SceneConfig, mode: EvalMode) -> EvalConfig {
        EvalConfig {
            repeats: self.repeats,
            workers: self.envs,
            seed: self.seed,
            ..EvalConfig::new(mode, evaluation_poses(scene, self.poses))
        }
    }
}

fn load_named(data: &DataDir, name: &str, step: Option<usize>) -> Result<(usize, Checkpoint)> {
    let dir = data.checkpoints(name);
    let steps = checkpoint_steps(&dir).with_context(|| format!("no checkpoints at {}", dir.display()))?;
    let step = match step {
        Some(s) => s,
        None => *steps.last().with_context(|| format!("no checkpoints at {}", dir.display()))?,
    };
    let path = data.checkpoint(name, step);
    let ckpt = load_checkpoint(&path, None).with_context(|| format!("loading {}", path.display()))?;
    Ok((step, ckpt))
}

/// Evaluates one checkpoint and writes `reports/eval-<name>-<step>-<mode>`.
pub fn eval_checkpoint(data: &DataDir, name: &str, step: Option<usize>, mode: EvalMode, args: &EvalArgs) -> Result<String> {
    let scene = load_scene(data)?;
    let (step, ckpt) = load_named(data, name, step)?;
    let label = format!("{name}@{step}");
    let report = evaluate_checkpoint(&ckpt, &scene, &args.config(&scene, mode), &label)?;
    std::fs::create_dir_all(data.reports())?;
    let stem = data.reports().join(format!("eval-{name}-{step:06}-{mode}"));
    save_json(&report, &stem.with_extension("json"))?;
    let csv = summary_csv([&report]);
    std::fs::write(stem.with_extension("csv"), &csv)?;
    Ok(csv)
}

/// Evaluates every checkpoint of `name` in both modes.
pub fn sweep(data: &DataDir, name: &str, args: &EvalArgs) -> Result<String> {
    let scene = load_scene(data)?;
    let dir = data.checkpoints(name);
    let steps = checkpoint_steps(&dir).with_context(|| format!("no checkpoints at {}", dir.display()))?;
    let checkpoints = steps
        .iter()
        .map(|&s| Ok((format!("{name}@{s}"), load_named(data, name, Some(s))?.1)))
        .collect::<Result<Vec<_>>>()?;
    let report = checkpoint_sweep(
        &checkpoints,
        &scene,
        &args.config(&scene, EvalMode::Virtual),
        &args.config(&scene, EvalMode::Coupled),
    )?;
    std::fs::create_dir_all(data.reports())?;
    let stem = data.reports().join(format!("sweep-{name}"));
    save_json(&report, &stem.with_extension("json"))?;
    let mut out = report.csv();
    std::fs::write(stem.with_extension("csv"), &out)?;
    match report.spearman {
        Some(r) => writeln!(out, "spearman {r:.4}")?,
        None => writeln!(out, "spearman undefined")?,
    }
    if let Some(best) = report.best() {
        writeln!(out, "best {} (coupled rate {:.4})", best.label, best.coupled.rate)?;
    }
    Ok(out)
}

/// Trains one policy per representation on the stored demos and evaluates
/// each; writes `reports/representations.{json,csv}`.
pub fn compare(data: &DataDir, kinds: &[RepresentationKind], train_config: &TrainConfig, mode: EvalMode, args: &EvalArgs) -> Result<String> {
    let scene = load_scene(data)?;
    let demos: Vec<_> = load_demos(data, &scene)?.into_iter().filter(|d| !is_augmentation(d)).collect();
    if demos.is_empty() {
        bail!("empty dataset: no demonstrations in {}", data.demos().display());
    }
    let dataset = Dataset::from_demos(&demos, HORIZON, WAYPOINTS)?;
    let plans: Vec<_> = kinds
        .iter()
        .map(|&kind| RepresentationPlan { kind, train: train_config })
        .collect();
    let (report, _) = compare_representations(&dataset.pairs, dataset.demo_count(), &scene, &plans, &args.config(&scene, mode), None)?;
    std::fs::create_dir_all(data.reports())?;
    let stem = data.reports().join("representations");
    save_json(&report, &stem.with_extension("json"))?;
    let csv = report.csv();
    std::fs::write(stem.with_extension("csv"), &csv)?;
    Ok(csv)
}

/// Harvests failure states from an evaluation report into `failures.json`.
/// With `scripted`, the expert re-demonstrates from each one; completed
/// re-demonstrations leave the queue.
pub fn augment(data: &DataDir, report: &Path, scripted: Option<Mode>, seed: u64) -> Result<String> {
    let report: SuccessReport = load_json(report).with_context(|| format!("loading {}", report.display()))?;
    let failures = harvest_failures(&report, DEDUP_POSITION, DEDUP_ANGLE);
    std::fs::create_dir_all(data.root())?;
    let mut out = format!(
        "harvested {} failure states from {} failed episodes\n",
        failures.len(),
        report.episodes.iter().filter(|e| !e.success).count()
    );
    let Some(mode) = scripted else {
        save_json(&failures, &data.failures())?;
        return Ok(out);
    };
    let scene = load_scene(data)?;
    let config = CollectConfig { seed, ..CollectConfig::new(mode) };
    let (demos, skipped) = collect_from_failures(&scene, &failures, &config)?;
    std::fs::create_dir_all(data.demos())?;
    for (i, d) in demos.iter().enumerate() {
        save_demo(&d.demo, &data.demos().join(format!("augment-{}-{i:04}.demo", mode_name(mode))))?;
    }
    let remaining: Vec<FailureState> = skipped.iter().map(|&i| failures[i].clone()).collect();
    save_json(&remaining, &data.failures())?;
    writeln!(out, "recorded {} augmentation demos; {} failures left in the queue", demos.len(), remaining.len())?;
    Ok(out)
}
