//! Adam training loop over training pairs, with checkpoints on a schedule and
//! a loss log.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

use twinsim_core::demo::TrainingPair;
use twinsim_core::scene::SceneConfig;

use crate::cfm::{cfm_loss, Batch};
use crate::checkpoint::Checkpoint;
use crate::error::PolicyError;
use crate::net::{NetSpec, PolicyNet};
use crate::obs::{observe_frame, Normalizer, ObsBatch, RepresentationKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Steps after which a checkpoint is emitted; 0 means the initial network.
    pub checkpoints: Vec<usize>,
    pub seed: u64,
    pub log_every: usize,
    pub ema_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 64,
            learning_rate: 3e-4,
            checkpoints: vec![1000, 1500, 2500, 5000],
            seed: 0,
            log_every: 10,
            ema_decay: 0.99,
        }
    }
}

impl TrainConfig {
    pub fn digest(&self, spec: &NetSpec) -> String {
        let text = serde_json::to_string(&(self, spec)).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss_ema: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoints: Vec<Checkpoint>,
    pub log: Vec<LogRow>,
}

impl TrainOutcome {
    pub fn last(&self) -> Option<&Checkpoint> {
        self.checkpoints.last()
    }
}

/// Training pairs of one representation kind, ready for batching.
pub struct TrainingSet<'a> {
    pub kind: RepresentationKind,
    pub scene: &'a SceneConfig,
    pub normalizer: Normalizer,
    pub pairs: &'a [TrainingPair],
    targets: Array2<f64>,
    state_obs: Option<ObsBatch>,
}

impl<'a> TrainingSet<'a> {
    pub fn new(kind: RepresentationKind, scene: &'a SceneConfig, pairs: &'a [TrainingPair]) -> Result<Self, PolicyError> {
        Self::with_normalizer(kind, scene, pairs, Normalizer::from_scene(scene))
    }

    pub fn with_normalizer(
        kind: RepresentationKind,
        scene: &'a SceneConfig,
        pairs: &'a [TrainingPair],
        normalizer: Normalizer,
    ) -> Result<Self, PolicyError> {
        let first = pairs.first().ok_or(PolicyError::EmptyDataset)?;
        let (m, d) = (first.m, first.d);
        if d != normalizer.d() {
            return Err(PolicyError::Shape(format!("{d} joints, normalizer has {}", normalizer.d())));
        }
        let mut targets = Array2::zeros((pairs.len(), m * (d + 1)));
        for (i, p) in pairs.iter().enumerate() {
            if p.m != m || p.d != d {
                return Err(PolicyError::Shape("training pairs disagree on trajectory shape".into()));
            }
            targets.row_mut(i).assign(&ndarray::Array1::from(normalizer.action(&p.target, m, &p.snapshot.q)));
        }
        // State observations are cheap, so they are built once; images are
        // rendered per batch.
        let state_obs = if kind.is_camera() {
            None
        } else {
            let inputs = pairs
                .iter()
                .map(|p| observe_frame(kind, scene, &p.snapshot))
                .collect::<Result<Vec<_>, _>>()?;
            Some(ObsBatch::from_inputs(&inputs.iter().collect::<Vec<_>>(), &normalizer)?)
        };
        Ok(Self {
            kind,
            scene,
            normalizer,
            pairs,
            targets,
            state_obs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn m(&self) -> usize {
        self.pairs[0].m
    }

    pub fn d(&self) -> usize {
        self.pairs[0].d
    }

    /// Network spec matching this set.
    pub fn spec(&self) -> NetSpec {
        let cam = match self.kind {
            RepresentationKind::State => None,
            RepresentationKind::StaticCam => Some(&self.scene.cameras.static_cam),
            RepresentationKind::GripperCam => Some(&self.scene.cameras.gripper_cam),
        };
        let image = cam.map(|c| [c.intrinsics.height as usize, c.intrinsics.width as usize]);
        let mut spec = NetSpec::new(self.kind, self.d(), image);
        spec.m = self.m();
        spec
    }

    pub fn batch(&self, rows: &[usize]) -> Result<Batch, PolicyError> {
        let target = self.targets.select(ndarray::Axis(0), rows);
        let obs = match &self.state_obs {
            Some(all) => ObsBatch {
                q: all.q.select(ndarray::Axis(0), rows),
                extra: all.extra.select(ndarray::Axis(0), rows),
            },
            None => {
                let inputs = rows
                    .iter()
                    .map(|&i| observe_frame(self.kind, self.scene, &self.pairs[i].snapshot))
                    .collect::<Result<Vec<_>, _>>()?;
                ObsBatch::from_inputs(&inputs.iter().collect::<Vec<_>>(), &self.normalizer)?
            }
        };
        Ok(Batch { obs, target })
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn step_seed(seed: u64, step: usize) -> u64 {
    twinsim_core::twin::observation_seed(seed ^ 0x5eed_cf3a_0000_0000, step as u64)
}

/// Trains a fresh network on `set`. Deterministic in `config.seed`.
pub fn train(set: &TrainingSet, config: &TrainConfig) -> Result<TrainOutcome, PolicyError> {
    train_from(PolicyNet::init(set.spec(), config.seed)?, set, config)
}

pub fn train_from(mut net: PolicyNet, set: &TrainingSet, config: &TrainConfig) -> Result<TrainOutcome, PolicyError> {
    if set.is_empty() {
        return Err(PolicyError::EmptyDataset);
    }
    let digest = config.digest(&net.spec);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(net.param_count(), config.learning_rate);
    let mut out = TrainOutcome {
        checkpoints: Vec::new(),
        log: Vec::new(),
    };
    if config.checkpoints.contains(&0) {
        out.checkpoints.push(Checkpoint::from_net(&net, &set.normalizer, 0, &digest));
    }
    let mut ema: Option<f64> = None;
    for step in 1..=config.steps {
        let rows: Vec<usize> = (0..config.batch_size).map(|_| rng.random_range(0..set.len())).collect();
        let batch = set.batch(&rows)?;
        let (loss, grad) = match cfm_loss(&net, &batch, step_seed(config.seed, step)) {
            Ok(v) if v.1.iter().all(|g| g.is_finite()) => v,
            Ok(_) | Err(PolicyError::NonFinite) => {
                return Err(PolicyError::Diverged {
                    step,
                    last_good: out.checkpoints.pop().map(Box::new),
                })
            }
            Err(e) => return Err(e),
        };
        adam.update(&mut net.params, &grad);
        let e = match ema {
            None => loss,
            Some(prev) => config.ema_decay * prev + (1.0 - config.ema_decay) * loss,
        };
        ema = Some(e);
        if step == 1 || step % config.log_every.max(1) == 0 || step == config.steps {
            out.log.push(LogRow { step, loss_ema: e });
        }
        if config.checkpoints.contains(&step) {
            out.checkpoints.push(Checkpoint::from_net(&net, &set.normalizer, step, &digest));
        }
    }
    Ok(out)
}

pub fn training_log_csv(log: &[LogRow]) -> String {
    let mut s = String::from("step,loss_ema\n");
    for row in log {
        writeln!(s, "{},{:?}", row.step, row.loss_ema).expect("write to string");
    }
    s
}

pub fn write_training_log(log: &[LogRow], path: &Path) -> Result<(), PolicyError> {
    std::fs::write(path, training_log_csv(log))?;
    Ok(())
}
