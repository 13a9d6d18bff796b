//! Conditional flow matching: the regression loss on straight-line paths from
//! Gaussian noise to demonstrated trajectories, and Euler sampling.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::PolicyError;
use crate::net::PolicyNet;
use crate::nn::mse_loss;
use crate::obs::{Normalizer, ObsBatch, ObsInput};

/// Euler steps used at inference.
pub const DEFAULT_EULER_STEPS: usize = 10;

/// `m` waypoints of desired joints plus a progress estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionTrajectory {
    pub horizon: f64,
    pub q: Vec<Vec<f64>>,
    pub progress: Vec<f64>,
}

impl ActionTrajectory {
    pub fn m(&self) -> usize {
        self.q.len()
    }

    /// Reads a normalized flat trajectory; progress is clamped to `[0, 1]`.
    pub fn from_normalized(flat: ArrayView1<f64>, norm: &Normalizer, m: usize, horizon: f64, q_obs: &[f64]) -> Self {
        let d = norm.d();
        let mut q = Vec::with_capacity(m);
        let mut progress = Vec::with_capacity(m);
        for k in 0..m {
            let w = flat.slice(ndarray::s![k * (d + 1)..(k + 1) * (d + 1)]);
            q.push((0..d).map(|i| norm.waypoint_inverse(i, w[i], q_obs)).collect());
            progress.push(((w[d] + 1.0) / 2.0).clamp(0.0, 1.0));
        }
        Self { horizon, q, progress }
    }
}

/// One training batch: normalized observations and normalized targets.
#[derive(Clone, Debug)]
pub struct Batch {
    pub obs: ObsBatch,
    pub target: Array2<f64>,
}

/// Noise and flow times for one loss evaluation.
#[derive(Clone, Debug)]
pub struct Draws {
    pub noise: Array2<f64>,
    pub tau: Vec<f64>,
}

impl Draws {
    pub fn sample(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal));
        let tau = (0..rows).map(|_| rng.random::<f64>()).collect();
        Self { noise, tau }
    }
}

/// Mean squared error between the predicted velocity and `target - noise` at
/// `A^τ = (1 - τ) noise + τ target`, with its parameter gradient.
pub fn cfm_loss_with(net: &PolicyNet, batch: &Batch, draws: &Draws) -> Result<(f64, Vec<f64>), PolicyError> {
    let n = batch.target.nrows();
    if n == 0 {
        return Err(PolicyError::EmptyBatch);
    }
    if batch.target.ncols() != net.spec.action_dim() || draws.noise.dim() != batch.target.dim() || draws.tau.len() != n {
        return Err(PolicyError::Shape(format!(
            "targets {:?}, noise {:?}, {} flow times",
            batch.target.dim(),
            draws.noise.dim(),
            draws.tau.len()
        )));
    }
    let tau = Array1::from(draws.tau.clone()).insert_axis(ndarray::Axis(1));
    let a_tau = &draws.noise * (1.0 - &tau) + &batch.target * &tau;
    let u = &batch.target - &draws.noise;
    let (pred, trace) = net.forward_trace(a_tau.view(), &draws.tau, &batch.obs)?;
    let (loss, gpred) = mse_loss(&pred, &u);
    if !loss.is_finite() {
        return Err(PolicyError::NonFinite);
    }
    let mut grad = vec![0.0; net.param_count()];
    net.backward(&trace, &gpred, &mut grad);
    Ok((loss, grad))
}

pub fn cfm_loss(net: &PolicyNet, batch: &Batch, seed: u64) -> Result<(f64, Vec<f64>), PolicyError> {
    let draws = Draws::sample(batch.target.nrows(), batch.target.ncols(), seed);
    cfm_loss_with(net, batch, &draws)
}

/// `K` forward Euler steps of `field` from `a0` over `τ ∈ [0, 1]`.
pub fn euler_integrate<F>(a0: Array1<f64>, steps: usize, mut field: F) -> Result<Array1<f64>, PolicyError>
where
    F: FnMut(&Array1<f64>, f64) -> Result<Array1<f64>, PolicyError>,
{
    if steps == 0 {
        return Err(PolicyError::Shape("at least one integration step".into()));
    }
    let h = 1.0 / steps as f64;
    let mut a = a0;
    for k in 0..steps {
        let v = field(&a, k as f64 * h)?;
        a.scaled_add(h, &v);
    }
    if a.iter().all(|v| v.is_finite()) {
        Ok(a)
    } else {
        Err(PolicyError::NonFinite)
    }
}

/// Draws a trajectory for one observation. Deterministic in `seed`.
pub fn sample_trajectory(
    net: &PolicyNet,
    norm: &Normalizer,
    obs: &ObsInput,
    steps: usize,
    seed: u64,
) -> Result<ActionTrajectory, PolicyError> {
    let batch = net.obs_batch(obs, norm)?;
    let obs_vec = net.encode(&batch)?;
    let dim = net.spec.action_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a0 = Array1::from_shape_simple_fn(dim, || rng.sample(StandardNormal));
    let a = euler_integrate(a0, steps, |a, tau| {
        let v = net.forward_encoded(a.view().insert_axis(ndarray::Axis(0)), &[tau], &obs_vec)?;
        Ok(v.row(0).to_owned())
    })?;
    Ok(ActionTrajectory::from_normalized(a.view(), norm, net.spec.m, net.spec.horizon, obs.q()))
}
