//! Demonstration recording, progress labels, training pairs and the on-disk
//! demo format.
//!
//! A demo file is one JSON header line followed by one line per frame:
//!
//! ```text
//! t;q0,q1;qd0,qd1;id:px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz;...;progress
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a save
//! followed by a load reproduces every value bit for bit. `progress` is empty
//! for unlabeled demos.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

use crate::body::BodyId;
use crate::math::{Pose, Quat, Vec3};
use crate::scene::SceneConfig;
use crate::world::WorldState;

pub const DEMO_VERSION: u32 = 1;
/// Relative tolerance on the spacing between consecutive recorded states.
pub const DT_TOLERANCE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("empty state stream")]
    EmptyStream,
    #[error("timestep drift at state {index}: gap {gap:.6} s, expected {dt:.6} s")]
    DtDrift { index: usize, gap: f64, dt: f64 },
    #[error("state {index} does not match the recording layout: {reason}")]
    Layout { index: usize, reason: String },
    #[error("progress labels need at least two frames")]
    TooShort,
    #[error("demo is not progress-labeled")]
    Unlabeled,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("demo file has no frames")]
    NoFrames,
    #[error("demo schema version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("scene digest {found} does not match expected {expected}")]
    Digest { expected: String, found: String },
    #[error("datasets disagree: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoSource {
    Online,
    Offline,
    Scripted,
    Teleop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoHeader {
    pub version: u32,
    pub scene_digest: String,
    pub dt: f64,
    pub d: usize,
    pub object_ids: Vec<BodyId>,
    pub source: DemoSource,
    /// Static physics parameters, recorded once.
    pub scene: SceneConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub id: BodyId,
    pub pose: Pose,
    pub linear_velocity: Vec3,
    pub angular_velocity: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub objects: Vec<ObjectState>,
    pub progress: Option<f64>,
}

impl Frame {
    pub fn from_world(world: &WorldState) -> Self {
        Self {
            t: world.time,
            q: world.robot.q.clone(),
            qdot: world.robot.qdot.clone(),
            objects: world
                .objects()
                .map(|b| ObjectState {
                    id: b.id,
                    pose: b.pose,
                    linear_velocity: b.linear_velocity,
                    angular_velocity: b.angular_velocity,
                })
                .collect(),
            progress: None,
        }
    }

    pub fn object_poses(&self) -> Vec<(BodyId, Pose)> {
        self.objects.iter().map(|o| (o.id, o.pose)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub header: DemoHeader,
    pub frames: Vec<Frame>,
}

impl Demonstration {
    pub fn duration(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    pub fn is_labeled(&self) -> bool {
        !self.frames.is_empty() && self.frames.iter().all(|f| f.progress.is_some())
    }
}

/// Captures a stream of world states at a fixed timestep.
pub fn record<'a, I>(scene: &SceneConfig, source: DemoSource, states: I) -> Result<Demonstration, DemoError>
where
    I: IntoIterator<Item = &'a WorldState>,
{
    let mut frames: Vec<Frame> = Vec::new();
    let mut header: Option<DemoHeader> = None;
    for (index, world) in states.into_iter().enumerate() {
        let frame = Frame::from_world(world);
        match &header {
            None => {
                header = Some(DemoHeader {
                    version: DEMO_VERSION,
                    scene_digest: scene.digest(),
                    dt: world.dt,
                    d: frame.q.len(),
                    object_ids: frame.objects.iter().map(|o| o.id).collect(),
                    source,
                    scene: scene.clone(),
                    tag: None,
                });
            }
            Some(h) => {
                let gap = frame.t - frames[index - 1].t;
                if ((gap - h.dt) / h.dt).abs() > DT_TOLERANCE {
                    return Err(DemoError::DtDrift { index, gap, dt: h.dt });
                }
                check_layout(h, &frame).map_err(|reason| DemoError::Layout { index, reason })?;
            }
        }
        frames.push(frame);
    }
    let header = header.ok_or(DemoError::EmptyStream)?;
    Ok(Demonstration { header, frames })
}

fn check_layout(h: &DemoHeader, f: &Frame) -> Result<(), String> {
    if f.q.len() != h.d || f.qdot.len() != h.d {
        return Err(format!("expected {} joints", h.d));
    }
    if f.objects.len() != h.object_ids.len() || f.objects.iter().zip(&h.object_ids).any(|(o, id)| o.id != *id) {
        return Err("object ids differ from header".into());
    }
    Ok(())
}

/// Labels frame `i` with `(t_i - t_0) / (t_last - t_0)`.
pub fn label_progress(mut demo: Demonstration) -> Result<Demonstration, DemoError> {
    if demo.frames.len() < 2 {
        return Err(DemoError::TooShort);
    }
    let t0 = demo.frames[0].t;
    let span = demo.frames.last().expect("non-empty").t - t0;
    let last = demo.frames.len() - 1;
    for (i, f) in demo.frames.iter_mut().enumerate() {
        f.progress = Some(if i == last { 1.0 } else { ((f.t - t0) / span).clamp(0.0, 1.0) });
    }
    Ok(demo)
}

/// Observation-side data of a training sample: everything needed to rebuild
/// the scene at that instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub demo: usize,
    pub frame: usize,
    pub snapshot: Frame,
    /// Row-major `m × (d + 1)`: joint positions then progress per waypoint.
    pub target: Vec<f64>,
    pub m: usize,
    pub d: usize,
}

impl TrainingPair {
    pub fn waypoint(&self, k: usize) -> &[f64] {
        let w = self.d + 1;
        &self.target[k * w..(k + 1) * w]
    }
}

fn interpolate(demo: &Demonstration, f: f64) -> (Vec<f64>, f64) {
    let last = demo.frames.len() - 1;
    let fr = &demo.frames;
    if f >= last as f64 {
        let l = &fr[last];
        return (l.q.clone(), l.progress.unwrap_or(1.0));
    }
    let i = f.floor() as usize;
    let a = f - i as f64;
    let (p, n) = (&fr[i], &fr[i + 1]);
    let q = p.q.iter().zip(&n.q).map(|(x, y)| x + (y - x) * a).collect();
    let (lp, ln) = (p.progress.unwrap_or(0.0), n.progress.unwrap_or(0.0));
    (q, lp + (ln - lp) * a)
}

/// One pair per frame; waypoint `k` of the pair at frame `i` targets time
/// `t_i + (k + 1) H / m`, interpolated linearly and padded with the final
/// frame. A demo shorter than the horizon yields a single pair.
pub fn make_training_pairs(
    demo: &Demonstration,
    demo_index: usize,
    horizon: f64,
    m: usize,
) -> Result<Vec<TrainingPair>, DemoError> {
    if !demo.is_labeled() {
        return Err(DemoError::Unlabeled);
    }
    let d = demo.header.d;
    let step = horizon / (m as f64 * demo.header.dt);
    let count = if demo.duration() < horizon { 1 } else { demo.frames.len() };
    let mut pairs = Vec::with_capacity(count);
    for i in 0..count {
        let mut target = Vec::with_capacity(m * (d + 1));
        for k in 0..m {
            let (q, p) = interpolate(demo, i as f64 + (k + 1) as f64 * step);
            target.extend(q);
            target.push(p);
        }
        pairs.push(TrainingPair {
            demo: demo_index,
            frame: i,
            snapshot: demo.frames[i].clone(),
            target,
            m,
            d,
        });
    }
    Ok(pairs)
}

fn push_list(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{v:?}").expect("write to string");
    }
}

fn frame_line(f: &Frame) -> String {
    let mut s = format!("{:?};", f.t);
    push_list(&mut s, &f.q);
    s.push(';');
    push_list(&mut s, &f.qdot);
    for o in &f.objects {
        let p = o.pose.position;
        let [qw, qx, qy, qz] = o.pose.quat_wxyz();
        let (v, w) = (o.linear_velocity, o.angular_velocity);
        write!(s, ";{}:", o.id.0).expect("write to string");
        push_list(&mut s, &[p.x, p.y, p.z, qw, qx, qy, qz, v.x, v.y, v.z, w.x, w.y, w.z]);
    }
    s.push(';');
    if let Some(p) = f.progress {
        write!(s, "{p:?}").expect("write to string");
    }
    s
}

fn parse_list(text: &str, expected: usize) -> Result<Vec<f64>, String> {
    let values = if text.is_empty() {
        Vec::new()
    } else {
        text.split(',')
            .map(|v| v.parse::<f64>().map_err(|e| format!("bad number {v:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()?
    };
    if values.len() != expected {
        return Err(format!("expected {expected} values, got {}", values.len()));
    }
    Ok(values)
}

fn parse_frame(line: &str, h: &DemoHeader) -> Result<Frame, String> {
    let fields: Vec<&str> = line.split(';').collect();
    let n_obj = h.object_ids.len();
    if fields.len() != 4 + n_obj {
        return Err(format!("expected {} fields, got {}", 4 + n_obj, fields.len()));
    }
    let t = fields[0].parse::<f64>().map_err(|e| format!("bad time: {e}"))?;
    let q = parse_list(fields[1], h.d)?;
    let qdot = parse_list(fields[2], h.d)?;
    let mut objects = Vec::with_capacity(n_obj);
    for (field, id) in fields[3..3 + n_obj].iter().zip(&h.object_ids) {
        let (tag, values) = field.split_once(':').ok_or("missing object id")?;
        if tag.parse::<u32>().ok() != Some(id.0) {
            return Err(format!("expected object {id}, got {tag:?}"));
        }
        let v = parse_list(values, 13)?;
        // Stored quaternions were unit when written; renormalizing would
        // perturb the last bits.
        let norm = (v[3] * v[3] + v[4] * v[4] + v[5] * v[5] + v[6] * v[6]).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(format!("object {id}: quaternion norm {norm}"));
        }
        objects.push(ObjectState {
            id: *id,
            pose: Pose::new(Vec3::new(v[0], v[1], v[2]), Quat::new_unchecked(nalgebra::Quaternion::new(v[3], v[4], v[5], v[6]))),
            linear_velocity: Vec3::new(v[7], v[8], v[9]),
            angular_velocity: Vec3::new(v[10], v[11], v[12]),
        });
    }
    let last = fields[3 + n_obj];
    let progress = if last.is_empty() {
        None
    } else {
        Some(last.parse::<f64>().map_err(|e| format!("bad progress: {e}"))?)
    };
    Ok(Frame {
        t,
        q,
        qdot,
        objects,
        progress,
    })
}

pub fn demo_to_string(demo: &Demonstration) -> String {
    let mut out = serde_json::to_string(&demo.header).expect("header serializes");
    out.push('\n');
    for f in &demo.frames {
        out.push_str(&frame_line(f));
        out.push('\n');
    }
    out
}

/// Parses a demo; with `expected` set, the header digest must match it.
pub fn demo_from_str(text: &str, expected: Option<&SceneConfig>) -> Result<Demonstration, DemoError> {
    let mut lines = text.lines();
    let first = lines.next().ok_or(DemoError::Parse {
        line: 1,
        reason: "missing header".into(),
    })?;
    let value: serde_json::Value = serde_json::from_str(first).map_err(|e| DemoError::Parse {
        line: 1,
        reason: e.to_string(),
    })?;
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != DEMO_VERSION {
        return Err(DemoError::Version {
            found: version,
            expected: DEMO_VERSION,
        });
    }
    let header: DemoHeader = serde_json::from_value(value).map_err(|e| DemoError::Parse {
        line: 1,
        reason: e.to_string(),
    })?;
    if let Some(scene) = expected {
        let digest = scene.digest();
        if digest != header.scene_digest {
            return Err(DemoError::Digest {
                expected: digest,
                found: header.scene_digest,
            });
        }
    }
    let mut frames = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let frame = parse_frame(line, &header).map_err(|reason| DemoError::Parse { line: i + 2, reason })?;
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(DemoError::NoFrames);
    }
    Ok(Demonstration { header, frames })
}

pub fn save_demo(demo: &Demonstration, path: &Path) -> Result<(), DemoError> {
    std::fs::write(path, demo_to_string(demo))?;
    Ok(())
}

pub fn load_demo(path: &Path, expected: Option<&SceneConfig>) -> Result<Demonstration, DemoError> {
    demo_from_str(&std::fs::read_to_string(path)?, expected)
}

/// Loads every `*.demo` file in `dir`, sorted by file name.
pub fn load_demo_dir(dir: &Path, expected: Option<&SceneConfig>) -> Result<Vec<Demonstration>, DemoError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "demo"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_demo(p, expected)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoProvenance {
    pub source: DemoSource,
    pub tag: Option<String>,
    pub frames: usize,
}

/// Training pairs from a set of demos sharing one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub scene_digest: String,
    pub d: usize,
    pub horizon: f64,
    pub m: usize,
    pub demos: Vec<DemoProvenance>,
    pub pairs: Vec<TrainingPair>,
}

impl Dataset {
    /// Labels unlabeled demos and extracts pairs from each.
    pub fn from_demos(demos: &[Demonstration], horizon: f64, m: usize) -> Result<Self, DemoError> {
        let first = demos.first().ok_or(DemoError::Mismatch("no demonstrations".into()))?;
        let mut set = Dataset {
            scene_digest: first.header.scene_digest.clone(),
            d: first.header.d,
            horizon,
            m,
            demos: Vec::new(),
            pairs: Vec::new(),
        };
        for (i, demo) in demos.iter().enumerate() {
            set.check(&demo.header.scene_digest, demo.header.d)?;
            let labeled;
            let demo = if demo.is_labeled() {
                demo
            } else {
                labeled = label_progress(demo.clone())?;
                &labeled
            };
            set.pairs.extend(make_training_pairs(demo, i, horizon, m)?);
            set.demos.push(DemoProvenance {
                source: demo.header.source,
                tag: demo.header.tag.clone(),
                frames: demo.frames.len(),
            });
        }
        Ok(set)
    }

    pub fn demo_count(&self) -> usize {
        self.demos.len()
    }

    fn check(&self, digest: &str, d: usize) -> Result<(), DemoError> {
        if digest != self.scene_digest {
            return Err(DemoError::Digest {
                expected: self.scene_digest.clone(),
                found: digest.to_string(),
            });
        }
        if d != self.d {
            return Err(DemoError::Mismatch(format!("joint count {d} vs {}", self.d)));
        }
        Ok(())
    }
}

/// Concatenates datasets, renumbering demo indices so each pair still points
/// at its source demo.
pub fn merge_datasets(sets: &[Dataset]) -> Result<Dataset, DemoError> {
    let first = sets.first().ok_or(DemoError::Mismatch("nothing to merge".into()))?;
    let mut out = Dataset {
        demos: Vec::new(),
        pairs: Vec::new(),
        ..first.clone()
    };
    for set in sets {
        out.check(&set.scene_digest, set.d)?;
        if set.m != out.m || set.horizon != out.horizon {
            return Err(DemoError::Mismatch("action horizon differs".into()));
        }
        let offset = out.demos.len();
        out.demos.extend(set.demos.iter().cloned());
        out.pairs.extend(set.pairs.iter().map(|p| TrainingPair {
            demo: p.demo + offset,
            ..p.clone()
        }));
    }
    Ok(out)
}
