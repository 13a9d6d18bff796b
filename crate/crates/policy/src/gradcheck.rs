//! Central finite-difference checks for every differentiable block.
//!
//! Each check builds a random instance on small shapes and compares the
//! analytic gradient of a scalar probe `sum(r * block(x))` (random `r`) with
//! respect to both parameters and inputs against central differences.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cfm::{cfm_loss_with, Batch, Draws};
use crate::net::{NetSpec, PolicyNet};
use crate::nn::{mse_loss, silu, silu_backward, Allocator, Conv2d, GlobalAvgPool, Linear};
use crate::obs::{ObsBatch, RepresentationKind};

pub const STEP: f64 = 1e-5;
/// Denominator floor for coordinates whose gradient is essentially zero.
pub const FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub block: String,
    pub checked: usize,
    pub max_relative_error: f64,
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(FLOOR))
        .fold(0.0, f64::max)
}

pub fn central_difference<F: FnMut(&[f64]) -> f64>(x: &[f64], mut f: F) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + STEP;
            let up = f(&probe);
            probe[i] = orig - STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn randv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn probe(y: &Array2<f64>, r: &Array2<f64>) -> f64 {
    (y * r).sum()
}

fn report(block: &str, pairs: &[(Vec<f64>, Vec<f64>)]) -> GradReport {
    GradReport {
        block: block.to_string(),
        checked: pairs.iter().map(|p| p.0.len()).sum(),
        max_relative_error: pairs.iter().map(|(a, n)| relative_error(a, n)).fold(0.0, f64::max),
    }
}

fn to_array(x: &[f64], rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), x.to_vec()).expect("shape")
}

pub fn check_linear(rng: &mut ChaCha8Rng) -> GradReport {
    let (batch, input, output) = (rng.random_range(1..5), rng.random_range(1..7), rng.random_range(1..7));
    let l = Linear::new(input, output, &mut Allocator::default());
    let p = randv(rng, l.param_len());
    let x = randn(rng, batch, input);
    let r = randn(rng, batch, output);
    let mut gp = vec![0.0; p.len()];
    let gx = l.backward(&p, x.view(), r.view(), &mut gp);
    let np = central_difference(&p, |p| probe(&l.forward(p, x.view()), &r));
    let xs = x.iter().copied().collect::<Vec<_>>();
    let nx = central_difference(&xs, |xv| probe(&l.forward(&p, to_array(xv, batch, input).view()), &r));
    report("linear", &[(gp, np), (gx.iter().copied().collect(), nx)])
}

pub fn check_silu(rng: &mut ChaCha8Rng) -> GradReport {
    let (rows, cols) = (rng.random_range(1..5), rng.random_range(1..9));
    let x = randn(rng, rows, cols) * 3.0;
    let r = randn(rng, rows, cols);
    let gx = silu_backward(&x, &r);
    let xs = x.iter().copied().collect::<Vec<_>>();
    let nx = central_difference(&xs, |xv| probe(&silu(&to_array(xv, rows, cols)), &r));
    report("silu", &[(gx.iter().copied().collect(), nx)])
}

pub fn check_conv(rng: &mut ChaCha8Rng) -> GradReport {
    let (h, w) = (rng.random_range(3..8), rng.random_range(3..8));
    let (cin, cout) = (rng.random_range(1..4), rng.random_range(1..4));
    let stride = rng.random_range(1..3);
    let batch = rng.random_range(1..3);
    let conv = Conv2d::new(h, w, cin, cout, 3, stride, 1, &mut Allocator::default());
    let p = randv(rng, conv.param_len());
    let x = randn(rng, batch, conv.input_len());
    let r = randn(rng, batch, conv.output_len());
    let (_, cols) = conv.forward(&p, x.view());
    let mut gp = vec![0.0; p.len()];
    let gx = conv.backward(&p, &cols, r.view(), &mut gp);
    let np = central_difference(&p, |p| probe(&conv.forward(p, x.view()).0, &r));
    let xs = x.iter().copied().collect::<Vec<_>>();
    let nx = central_difference(&xs, |xv| {
        probe(&conv.forward(&p, to_array(xv, batch, conv.input_len()).view()).0, &r)
    });
    report("conv2d", &[(gp, np), (gx.iter().copied().collect(), nx)])
}

pub fn check_pool(rng: &mut ChaCha8Rng) -> GradReport {
    let pool = GlobalAvgPool {
        positions: rng.random_range(1..10),
        channels: rng.random_range(1..5),
    };
    let batch = rng.random_range(1..4);
    let n = pool.positions * pool.channels;
    let x = randn(rng, batch, n);
    let r = randn(rng, batch, pool.channels);
    let gx = pool.backward(r.view());
    let xs = x.iter().copied().collect::<Vec<_>>();
    let nx = central_difference(&xs, |xv| probe(&pool.forward(to_array(xv, batch, n).view()), &r));
    report("global-avg-pool", &[(gx.iter().copied().collect(), nx)])
}

pub fn check_mse(rng: &mut ChaCha8Rng) -> GradReport {
    let (rows, cols) = (rng.random_range(1..5), rng.random_range(1..7));
    let pred = randn(rng, rows, cols);
    let target = randn(rng, rows, cols);
    let (_, g) = mse_loss(&pred, &target);
    let xs = pred.iter().copied().collect::<Vec<_>>();
    let n = central_difference(&xs, |xv| mse_loss(&to_array(xv, rows, cols), &target).0);
    report("mse-loss", &[(g.iter().copied().collect(), n)])
}

fn tiny_spec(kind: RepresentationKind, rng: &mut ChaCha8Rng) -> NetSpec {
    let mut spec = NetSpec::new(kind, 2, Some([rng.random_range(4..9), rng.random_range(4..9)]));
    spec.m = rng.random_range(1..4);
    spec.embed = 4;
    spec.hidden = rng.random_range(3..7);
    spec
}

fn tiny_obs(spec: &NetSpec, batch: usize, rng: &mut ChaCha8Rng) -> ObsBatch {
    let width = spec.image.map_or(7, |[h, w]| h * w * 3);
    ObsBatch {
        q: randn(rng, batch, spec.d),
        extra: randn(rng, batch, width) * 0.5,
    }
}

/// Full CFM loss of a small network, gradient over every parameter.
pub fn check_cfm_loss(kind: RepresentationKind, rng: &mut ChaCha8Rng) -> GradReport {
    let spec = tiny_spec(kind, rng);
    let mut net = PolicyNet::init(spec.clone(), rng.random()).expect("valid spec");
    // Scale up the output layer so its gradients are not tiny.
    let out = net.mlp[3];
    for v in &mut net.params[out.offset..out.offset + out.param_len()] {
        *v *= 10.0;
    }
    let batch = rng.random_range(1..4);
    let b = Batch {
        obs: tiny_obs(&spec, batch, rng),
        target: randn(rng, batch, spec.action_dim()),
    };
    let draws = Draws::sample(batch, spec.action_dim(), rng.random());
    let (_, analytic) = cfm_loss_with(&net, &b, &draws).expect("finite loss");
    let params = net.params.clone();
    let mut probe_net = net.clone();
    let numeric = central_difference(&params, |p| {
        probe_net.params.copy_from_slice(p);
        cfm_loss_with(&probe_net, &b, &draws).expect("finite loss").0
    });
    report(&format!("cfm-loss ({kind})"), &[(analytic, numeric)])
}

/// Directional derivative of the network output along a random input
/// direction versus the analytic Jacobian-vector product.
pub fn check_input_jvp(kind: RepresentationKind, rng: &mut ChaCha8Rng) -> GradReport {
    let spec = tiny_spec(kind, rng);
    let net = PolicyNet::init(spec.clone(), rng.random()).expect("valid spec");
    let obs = tiny_obs(&spec, 1, rng);
    let a = randn(rng, 1, spec.action_dim());
    let tau = [rng.random::<f64>()];
    let r = randn(rng, 1, spec.action_dim());
    let (_, trace) = net.forward_trace(a.view(), &tau, &obs).expect("shapes");
    let mut scratch = vec![0.0; net.param_count()];
    let g_input = net.backward(&trace, &r, &mut scratch);
    let ga: Vec<f64> = g_input.row(0).iter().take(spec.action_dim()).copied().collect();
    let xs = a.iter().copied().collect::<Vec<_>>();
    let na = central_difference(&xs, |xv| {
        probe(&net.forward(to_array(xv, 1, spec.action_dim()).view(), &tau, &obs).expect("shapes"), &r)
    });
    report(&format!("network input ({kind})"), &[(ga, na)])
}

/// Runs every check with shapes drawn from `seed`.
pub fn check_all(seed: u64) -> Vec<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![
        check_linear(&mut rng),
        check_silu(&mut rng),
        check_conv(&mut rng),
        check_pool(&mut rng),
        check_mse(&mut rng),
    ];
    for kind in RepresentationKind::ALL {
        out.push(check_input_jvp(kind, &mut rng));
        out.push(check_cfm_loss(kind, &mut rng));
    }
    out
}
