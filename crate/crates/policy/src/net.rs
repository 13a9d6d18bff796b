//! Velocity-field network: an MLP over the noisy action trajectory, a
//! sinusoidal flow-time embedding and the observation vector. Camera kinds
//! feed the image through a small conv encoder trained jointly with the MLP.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::PolicyError;
use crate::nn::{silu, silu_backward, Allocator, Conv2d, GlobalAvgPool, Linear};
use crate::obs::{ObsBatch, ObsInput, RepresentationKind};

pub const FEATURE_DIM: usize = 64;
const ENCODER_CHANNELS: [usize; 3] = [8, 16, 32];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub kind: RepresentationKind,
    /// Joint count.
    pub d: usize,
    /// Waypoints per trajectory.
    pub m: usize,
    pub horizon: f64,
    pub embed: usize,
    pub hidden: usize,
    /// `[height, width]` of camera images.
    pub image: Option<[usize; 2]>,
}

impl NetSpec {
    pub fn new(kind: RepresentationKind, d: usize, image: Option<[usize; 2]>) -> Self {
        Self {
            kind,
            d,
            m: 32,
            horizon: 1.0,
            embed: 32,
            hidden: 256,
            image: if kind.is_camera() { image } else { None },
        }
    }

    pub fn action_dim(&self) -> usize {
        self.m * (self.d + 1)
    }

    /// Length of the observation vector the MLP sees.
    pub fn obs_dim(&self) -> usize {
        self.d + if self.kind.is_camera() { FEATURE_DIM } else { 7 }
    }

    fn validate(&self) -> Result<(), PolicyError> {
        if self.d == 0 || self.m == 0 || self.embed % 2 != 0 || self.hidden == 0 {
            return Err(PolicyError::Shape(format!("invalid network spec {self:?}")));
        }
        if self.kind.is_camera() != self.image.is_some() {
            return Err(PolicyError::Shape("camera kinds need an image size, state kind none".into()));
        }
        Ok(())
    }
}

/// Conv encoder: three stride-2 convolutions, global average pool, linear.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageEncoder {
    pub convs: [Conv2d; 3],
    pub pool: GlobalAvgPool,
    pub head: Linear,
}

impl ImageEncoder {
    fn new(height: usize, width: usize, alloc: &mut Allocator) -> Self {
        let c1 = Conv2d::new(height, width, 3, ENCODER_CHANNELS[0], 3, 2, 1, alloc);
        let c2 = Conv2d::new(c1.out_height(), c1.out_width(), c1.cout, ENCODER_CHANNELS[1], 3, 2, 1, alloc);
        let c3 = Conv2d::new(c2.out_height(), c2.out_width(), c2.cout, ENCODER_CHANNELS[2], 3, 2, 1, alloc);
        let pool = GlobalAvgPool {
            positions: c3.out_height() * c3.out_width(),
            channels: c3.cout,
        };
        let head = Linear::new(c3.cout, FEATURE_DIM, alloc);
        Self {
            convs: [c1, c2, c3],
            pool,
            head,
        }
    }
}

#[derive(Debug)]
struct EncoderTrace {
    /// Input of every conv, then the pooled features.
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    cols: Vec<Array2<f64>>,
    pooled: Array2<f64>,
}

/// Intermediate values kept by `forward_trace` for `backward`.
#[derive(Debug)]
pub struct Trace {
    encoder: Option<EncoderTrace>,
    /// Input of every MLP layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of the hidden layers.
    pre: Vec<Array2<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    pub spec: NetSpec,
    pub encoder: Option<ImageEncoder>,
    pub mlp: Vec<Linear>,
    pub params: Vec<f64>,
}

/// `[sin(f_i τ), cos(f_i τ)]` with frequencies spaced geometrically from 1
/// to 1000 rad.
pub fn time_embedding(tau: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let f = if half > 1 {
            (1000f64.ln() * i as f64 / (half - 1) as f64).exp()
        } else {
            1.0
        };
        out.push((f * tau).sin());
        out.push((f * tau).cos());
    }
    out
}

impl PolicyNet {
    /// Layers only; parameters are zero.
    pub fn zeroed(spec: NetSpec) -> Result<Self, PolicyError> {
        spec.validate()?;
        let mut alloc = Allocator::default();
        let encoder = spec.image.map(|[h, w]| ImageEncoder::new(h, w, &mut alloc));
        let input = spec.action_dim() + spec.embed + spec.obs_dim();
        let mlp = vec![
            Linear::new(input, spec.hidden, &mut alloc),
            Linear::new(spec.hidden, spec.hidden, &mut alloc),
            Linear::new(spec.hidden, spec.hidden, &mut alloc),
            Linear::new(spec.hidden, spec.action_dim(), &mut alloc),
        ];
        Ok(Self {
            spec,
            encoder,
            mlp,
            params: vec![0.0; alloc.len],
        })
    }

    /// He-initialized hidden layers; the output layer is scaled down so the
    /// initial field is small.
    pub fn init(spec: NetSpec, seed: u64) -> Result<Self, PolicyError> {
        let mut net = Self::zeroed(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Some(enc) = &net.encoder {
            for c in &enc.convs {
                c.init(&mut net.params, &mut rng);
            }
            enc.head.init(&mut net.params, &mut rng);
        }
        for l in &net.mlp {
            l.init(&mut net.params, &mut rng);
        }
        let out = net.mlp[3];
        for v in &mut net.params[out.offset..out.offset + out.param_len()] {
            *v *= 0.1;
        }
        Ok(net)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn zero_output_layer(&mut self) {
        self.mlp[3].zero(&mut self.params);
    }

    fn encode_trace(&self, obs: &ObsBatch, keep: bool) -> Result<(Array2<f64>, Option<EncoderTrace>), PolicyError> {
        let d = self.spec.d;
        if obs.q.ncols() != d {
            return Err(PolicyError::Shape(format!("expected {d} joints, got {}", obs.q.ncols())));
        }
        let Some(enc) = &self.encoder else {
            if obs.extra.ncols() != 7 {
                return Err(PolicyError::Shape(format!("state observation needs 7 pose values, got {}", obs.extra.ncols())));
            }
            return Ok((concatenate![Axis(1), obs.q, obs.extra], None));
        };
        if obs.extra.ncols() != enc.convs[0].input_len() {
            return Err(PolicyError::Shape(format!(
                "expected {} pixel values, got {}",
                enc.convs[0].input_len(),
                obs.extra.ncols()
            )));
        }
        let p = &self.params;
        let mut trace = EncoderTrace {
            inputs: Vec::new(),
            pre: Vec::new(),
            cols: Vec::new(),
            pooled: Array2::zeros((0, 0)),
        };
        let mut x = obs.extra.clone();
        for conv in &enc.convs {
            let (z, cols) = conv.forward(p, x.view());
            let a = silu(&z);
            if keep {
                trace.inputs.push(x);
                trace.pre.push(z);
                trace.cols.push(cols);
            }
            x = a;
        }
        let pooled = enc.pool.forward(x.view());
        let features = enc.head.forward(p, pooled.view());
        if keep {
            trace.inputs.push(x);
            trace.pooled = pooled;
        }
        Ok((concatenate![Axis(1), obs.q, features], keep.then_some(trace)))
    }

    /// Observation vectors the MLP is conditioned on.
    pub fn encode(&self, obs: &ObsBatch) -> Result<Array2<f64>, PolicyError> {
        Ok(self.encode_trace(obs, false)?.0)
    }

    fn mlp_input(&self, a: ArrayView2<f64>, tau: &[f64], obs_vec: &Array2<f64>) -> Result<Array2<f64>, PolicyError> {
        let n = a.nrows();
        if a.ncols() != self.spec.action_dim() || tau.len() != n || obs_vec.nrows() != n {
            return Err(PolicyError::Shape(format!(
                "trajectory {:?}, {} flow times, {} observations",
                a.dim(),
                tau.len(),
                obs_vec.nrows()
            )));
        }
        let e = self.spec.embed;
        let mut emb = Array2::zeros((n, e));
        for (i, &t) in tau.iter().enumerate() {
            emb.row_mut(i).assign(&Array1::from(time_embedding(t, e)));
        }
        Ok(concatenate![Axis(1), a, emb, obs_vec.view()])
    }

    fn mlp_forward(&self, x: Array2<f64>, keep: bool) -> (Array2<f64>, Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let p = &self.params;
        let (mut inputs, mut pre) = (Vec::new(), Vec::new());
        let mut h = x;
        for (i, l) in self.mlp.iter().enumerate() {
            let z = l.forward(p, h.view());
            if keep {
                inputs.push(h);
            }
            if i + 1 == self.mlp.len() {
                return (z, inputs, pre);
            }
            h = silu(&z);
            if keep {
                pre.push(z);
            }
        }
        unreachable!("mlp has an output layer")
    }

    /// Velocity for a batch given precomputed observation vectors.
    pub fn forward_encoded(&self, a: ArrayView2<f64>, tau: &[f64], obs_vec: &Array2<f64>) -> Result<Array2<f64>, PolicyError> {
        let x = self.mlp_input(a, tau, obs_vec)?;
        Ok(self.mlp_forward(x, false).0)
    }

    pub fn forward(&self, a: ArrayView2<f64>, tau: &[f64], obs: &ObsBatch) -> Result<Array2<f64>, PolicyError> {
        let obs_vec = self.encode(obs)?;
        self.forward_encoded(a, tau, &obs_vec)
    }

    pub fn forward_trace(&self, a: ArrayView2<f64>, tau: &[f64], obs: &ObsBatch) -> Result<(Array2<f64>, Trace), PolicyError> {
        let (obs_vec, encoder) = self.encode_trace(obs, true)?;
        let x = self.mlp_input(a, tau, &obs_vec)?;
        let (y, inputs, pre) = self.mlp_forward(x, true);
        Ok((y, Trace { encoder, inputs, pre }))
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the MLP input `[trajectory, embedding, observation]`.
    pub fn backward(&self, trace: &Trace, gy: &Array2<f64>, grad: &mut [f64]) -> Array2<f64> {
        let p = &self.params;
        let mut g = gy.clone();
        for (i, l) in self.mlp.iter().enumerate().rev() {
            if i + 1 < self.mlp.len() {
                g = silu_backward(&trace.pre[i], &g);
            }
            g = l.backward(p, trace.inputs[i].view(), g.view(), grad);
        }
        if let (Some(enc), Some(et)) = (&self.encoder, &trace.encoder) {
            let start = self.spec.action_dim() + self.spec.embed + self.spec.d;
            let gf = g.slice(s![.., start..]).to_owned();
            let gp = enc.head.backward(p, et.pooled.view(), gf.view(), grad);
            let mut gx = enc.pool.backward(gp.view());
            for (i, conv) in enc.convs.iter().enumerate().rev() {
                let gz = silu_backward(&et.pre[i], &gx);
                gx = conv.backward(p, &et.cols[i], gz.view(), grad);
            }
            debug_assert_eq!(gx.ncols(), et.inputs[0].ncols());
        }
        g
    }

    /// Single-observation convenience used at rollout time.
    pub fn obs_batch(&self, input: &ObsInput, norm: &crate::obs::Normalizer) -> Result<ObsBatch, PolicyError> {
        if !input.matches(self.spec.kind) {
            return Err(PolicyError::Shape(format!("input does not match a {} policy", self.spec.kind)));
        }
        ObsBatch::from_inputs(&[input], norm)
    }
}
