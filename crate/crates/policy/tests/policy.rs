use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use twinsim_core::demo::{label_progress, make_training_pairs, record, DemoSource, TrainingPair};
use twinsim_core::math::{Pose, Quat, Vec3};
use twinsim_core::render::Image;
use twinsim_core::scene::{build_scene, SceneConfig};
use twinsim_core::CorrectiveInput;
use twinsim_policy::checkpoint::{CHECKPOINT_VERSION, MAGIC};
use twinsim_policy::train::training_log_csv;
use twinsim_policy::*;

fn small_spec(kind: RepresentationKind) -> NetSpec {
    let mut spec = NetSpec::new(kind, 2, Some([16, 16]));
    spec.hidden = 32;
    spec.m = 4;
    spec
}

fn state_input(q: [f64; 2], x: f64, yaw: f64) -> ObsInput {
    ObsInput::State {
        q: q.to_vec(),
        pose: Pose::new(Vec3::new(x, 0.02, 0.01), Quat::from_euler_angles(0.0, 0.0, yaw)),
    }
}

fn image_input(size: u32, shade: u8) -> ObsInput {
    ObsInput::Image {
        q: vec![0.01, -0.02],
        image: Image::filled(size, size, [shade, 255 - shade, shade / 2]),
    }
}

fn random_batch(spec: &NetSpec, n: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<ObsInput> = (0..n)
        .map(|i| match spec.kind {
            RepresentationKind::State => state_input([rng.random(), rng.random()], 0.01 * i as f64, rng.random()),
            _ => image_input(spec.image.unwrap()[0] as u32, rng.random()),
        })
        .collect();
    let obs = ObsBatch::from_inputs(&inputs.iter().collect::<Vec<_>>(), &Normalizer::identity(2)).unwrap();
    let target = Array2::from_shape_simple_fn((n, spec.action_dim()), || rng.sample(StandardNormal));
    Batch { obs, target }
}

#[test]
fn zero_output_layer_gives_zero_velocity() {
    for kind in RepresentationKind::ALL {
        let spec = small_spec(kind);
        let mut net = PolicyNet::init(spec.clone(), 3).unwrap();
        net.zero_output_layer();
        let b = random_batch(&spec, 3, 1);
        let a = Array2::from_elem((3, spec.action_dim()), 0.7);
        let v = net.forward(a.view(), &[0.1, 0.5, 0.9], &b.obs).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn forward_is_deterministic_and_checks_shapes() {
    let spec = small_spec(RepresentationKind::State);
    let b = random_batch(&spec, 2, 4);
    let a = Array2::from_elem((2, spec.action_dim()), 0.3);
    let v1 = PolicyNet::init(spec.clone(), 11).unwrap().forward(a.view(), &[0.2, 0.4], &b.obs).unwrap();
    let v2 = PolicyNet::init(spec.clone(), 11).unwrap().forward(a.view(), &[0.2, 0.4], &b.obs).unwrap();
    assert_eq!(v1, v2);
    let net = PolicyNet::init(spec.clone(), 11).unwrap();
    let wide = Array2::zeros((2, spec.action_dim() + 1));
    assert!(matches!(net.forward(wide.view(), &[0.2, 0.4], &b.obs), Err(PolicyError::Shape(_))));
    assert!(matches!(net.forward(a.view(), &[0.2], &b.obs), Err(PolicyError::Shape(_))));
    let cam = random_batch(&small_spec(RepresentationKind::StaticCam), 2, 4);
    assert!(matches!(net.forward(a.view(), &[0.2, 0.4], &cam.obs), Err(PolicyError::Shape(_))));
}

#[test]
fn observation_vector_lengths() {
    let scene = SceneConfig::pusht();
    let world = build_scene(&scene, 1).unwrap();
    let norm = Normalizer::from_scene(&scene);
    let state = observe_world(RepresentationKind::State, &scene, &world).unwrap();
    let spec = NetSpec::new(RepresentationKind::State, 2, None);
    let net = PolicyNet::init(spec, 0).unwrap();
    let v = net.encode(&net.obs_batch(&state, &norm).unwrap()).unwrap();
    assert_eq!(v.ncols(), 2 + 3 + 4);
    let quat = v.row(0).iter().skip(5).map(|x| x * x).sum::<f64>();
    assert!((quat - 1.0).abs() < 1e-12);

    for kind in [RepresentationKind::StaticCam, RepresentationKind::GripperCam] {
        let input = observe_world(kind, &scene, &world).unwrap();
        let net = PolicyNet::init(NetSpec::new(kind, 2, Some([64, 64])), 0).unwrap();
        let v = net.encode(&net.obs_batch(&input, &norm).unwrap()).unwrap();
        assert_eq!(v.ncols(), 2 + 64);
        let again = net.encode(&net.obs_batch(&observe_world(kind, &scene, &world).unwrap(), &norm).unwrap()).unwrap();
        assert_eq!(v, again);
        // a state input cannot drive a camera policy
        assert!(net.obs_batch(&state, &norm).is_err());
    }
}

#[test]
fn zero_net_loss_is_mean_squared_target_minus_noise() {
    let spec = small_spec(RepresentationKind::State);
    let mut net = PolicyNet::init(spec.clone(), 5).unwrap();
    net.zero_output_layer();
    let batch = random_batch(&spec, 8, 9);
    let draws = Draws::sample(8, spec.action_dim(), 77);
    let (loss, _) = cfm_loss_with(&net, &batch, &draws).unwrap();
    let direct = (0..8)
        .map(|i| {
            (0..spec.action_dim())
                .map(|j| (batch.target[[i, j]] - draws.noise[[i, j]]).powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        / 8.0;
    assert!((loss - direct).abs() < 1e-12);

    // Monte-Carlo: E||A - A0||^2 = ||A||^2 + D for unit Gaussian A0.
    let target = Array1::from_shape_fn(spec.action_dim(), |j| 0.1 * j as f64);
    let n = 4000;
    let mut big = random_batch(&spec, n, 3);
    for mut row in big.target.rows_mut() {
        row.assign(&target);
    }
    let (mc, _) = cfm_loss(&net, &big, 123).unwrap();
    let expected = target.dot(&target) + spec.action_dim() as f64;
    let sd = (2.0 * spec.action_dim() as f64 + 4.0 * target.dot(&target)).sqrt() / (n as f64).sqrt();
    assert!((mc - expected).abs() < 4.0 * sd, "{mc} vs {expected} (sd {sd})");
}

#[test]
fn degenerate_target_gives_zero_loss() {
    let spec = small_spec(RepresentationKind::State);
    let mut net = PolicyNet::init(spec.clone(), 5).unwrap();
    net.zero_output_layer();
    let mut batch = random_batch(&spec, 4, 2);
    let draws = Draws::sample(4, spec.action_dim(), 1);
    batch.target = draws.noise.clone();
    let (loss, grad) = cfm_loss_with(&net, &batch, &draws).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|&g| g == 0.0));
    let empty = Batch {
        obs: ObsBatch {
            q: Array2::zeros((0, 2)),
            extra: Array2::zeros((0, 7)),
        },
        target: Array2::zeros((0, spec.action_dim())),
    };
    assert!(matches!(cfm_loss_with(&net, &empty, &draws), Err(PolicyError::EmptyBatch)));
}

#[test]
fn zero_field_sampling_returns_the_noise() {
    let spec = NetSpec::new(RepresentationKind::State, 2, None);
    let mut net = PolicyNet::init(spec.clone(), 1).unwrap();
    net.zero_output_layer();
    let norm = Normalizer::identity(2);
    let obs = state_input([0.0, 0.0], 0.0, 0.3);
    let traj = sample_trajectory(&net, &norm, &obs, DEFAULT_EULER_STEPS, 42).unwrap();
    assert_eq!((traj.m(), traj.q[0].len()), (32, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let a0: Vec<f64> = (0..spec.action_dim()).map(|_| rng.sample(StandardNormal)).collect();
    for k in 0..32 {
        assert_eq!(traj.q[k], a0[k * 3..k * 3 + 2].to_vec());
        assert_eq!(traj.progress[k], ((a0[k * 3 + 2] + 1.0) / 2.0).clamp(0.0, 1.0));
    }
    assert!(traj.progress.iter().all(|p| (0.0..=1.0).contains(p)));
    assert_eq!(sample_trajectory(&net, &norm, &obs, 3, 42).unwrap(), traj);
    assert!(sample_trajectory(&net, &norm, &obs, 0, 42).is_err());
}

#[test]
fn constant_field_shifts_noise_exactly() {
    let c = Array1::from(vec![0.25, -0.5, 1.0, 2.0]);
    let a0 = Array1::from(vec![1.0, 2.0, -3.0, 0.5]);
    for k in [1, 2, 4, 8] {
        let out = euler_integrate(a0.clone(), k, |_, _| Ok(c.clone())).unwrap();
        assert_eq!(out, &a0 + &c, "K = {k}");
    }
    let nan = euler_integrate(a0, 2, |_, _| Ok(Array1::from_elem(4, f64::NAN)));
    assert!(matches!(nan, Err(PolicyError::NonFinite)));
}

#[test]
fn sampling_is_deterministic_in_seed() {
    let spec = NetSpec::new(RepresentationKind::State, 2, None);
    let net = PolicyNet::init(spec, 8).unwrap();
    let norm = Normalizer::from_scene(&SceneConfig::pusht());
    let obs = state_input([0.05, -0.1], 0.02, 1.0);
    let a = sample_trajectory(&net, &norm, &obs, 10, 1).unwrap();
    assert_eq!(a, sample_trajectory(&net, &norm, &obs, 10, 1).unwrap());
    assert_ne!(a, sample_trajectory(&net, &norm, &obs, 10, 2).unwrap());
}

fn synthetic_pairs(demos: usize, frames: usize, m: usize) -> (SceneConfig, Vec<TrainingPair>) {
    let scene = SceneConfig::pusht();
    let mut pairs = Vec::new();
    for s in 0..demos {
        let mut w = build_scene(&scene, s as u64).unwrap();
        let mut states = Vec::new();
        let phase = s as f64;
        for i in 0..frames {
            states.push(w.clone());
            let t = i as f64 / 60.0;
            w.set_joint_target(&[0.15 * (t + phase).sin(), -0.2 + 0.1 * t]).unwrap();
            w.step(&CorrectiveInput::empty()).unwrap();
        }
        let demo = label_progress(record(&scene, DemoSource::Scripted, &states).unwrap()).unwrap();
        pairs.extend(make_training_pairs(&demo, s, 1.0, m).unwrap());
    }
    (scene, pairs)
}

fn quick_config(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 16,
        learning_rate: 1e-3,
        checkpoints: vec![0, steps / 2, steps],
        seed: 4,
        log_every: 10,
        ema_decay: 0.9,
    }
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let (scene, pairs) = synthetic_pairs(4, 120, 8);
    let set = TrainingSet::new(RepresentationKind::State, &scene, &pairs).unwrap();
    let config = quick_config(300);
    let mut spec = set.spec();
    spec.hidden = 64;
    let run = || train_from(PolicyNet::init(spec.clone(), config.seed).unwrap(), &set, &config).unwrap();
    let out = run();
    assert_eq!(out.checkpoints.iter().map(|c| c.step).collect::<Vec<_>>(), vec![0, 150, 300]);
    let first = out.log.first().unwrap().loss_ema;
    let last = out.log.last().unwrap().loss_ema;
    // The 0.5x reduction on real scripted demos is checked in the eval crate.
    assert!(last <= 0.75 * first, "loss EMA {first} -> {last}");
    // smoothed loss never climbs more than 5% over a 10x window
    for a in &out.log {
        for b in out.log.iter().filter(|b| b.step >= 10 * a.step) {
            assert!(b.loss_ema <= 1.05 * a.loss_ema, "step {} {} -> step {} {}", a.step, a.loss_ema, b.step, b.loss_ema);
        }
    }
    assert_eq!(run().checkpoints, out.checkpoints);

    let csv = training_log_csv(&out.log);
    assert!(csv.starts_with("step,loss_ema\n1,"));
    assert_eq!(csv.lines().count(), out.log.len() + 1);
}

#[test]
fn camera_policy_trains_end_to_end() {
    let (scene, pairs) = synthetic_pairs(2, 40, 4);
    let set = TrainingSet::new(RepresentationKind::StaticCam, &scene, &pairs).unwrap();
    let mut spec = set.spec();
    assert_eq!(spec.image, Some([64, 64]));
    spec.hidden = 32;
    let config = quick_config(20);
    let out = train_from(PolicyNet::init(spec, 1).unwrap(), &set, &config).unwrap();
    assert_eq!(out.checkpoints.len(), 3);
    assert!(out.log.iter().all(|r| r.loss_ema.is_finite()));
    let ckpt = out.last().unwrap();
    let net = ckpt.to_net().unwrap();
    let world = build_scene(&scene, 0).unwrap();
    let obs = observe_world(RepresentationKind::StaticCam, &scene, &world).unwrap();
    let traj = sample_trajectory(&net, &ckpt.normalizer, &obs, 10, 0).unwrap();
    assert_eq!(traj.m(), 4);
}

#[test]
fn empty_dataset_is_rejected() {
    let scene = SceneConfig::pusht();
    assert!(matches!(
        TrainingSet::new(RepresentationKind::GripperCam, &scene, &[]),
        Err(PolicyError::EmptyDataset)
    ));
}

#[test]
fn divergence_keeps_last_good_checkpoint() {
    let (scene, pairs) = synthetic_pairs(1, 60, 4);
    let set = TrainingSet::new(RepresentationKind::State, &scene, &pairs).unwrap();
    let mut config = quick_config(50);
    config.checkpoints = vec![0];
    config.learning_rate = 1e300;
    let mut spec = set.spec();
    spec.hidden = 8;
    match train_from(PolicyNet::init(spec, 0).unwrap(), &set, &config) {
        Err(PolicyError::Diverged { last_good, .. }) => assert_eq!(last_good.unwrap().step, 0),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.log.len())),
    }
}

fn golden_checkpoint() -> Checkpoint {
    let mut spec = NetSpec::new(RepresentationKind::State, 2, None);
    spec.m = 1;
    spec.embed = 2;
    spec.hidden = 1;
    let net = PolicyNet::zeroed(spec.clone()).unwrap();
    Checkpoint {
        step: 1500,
        spec,
        normalizer: Normalizer::identity(2),
        config_digest: "ab".into(),
        params: (0..net.param_count()).map(|i| i as f32 * 0.5 - 1.0).collect(),
    }
}

#[test]
fn checkpoint_bytes_are_pinned() {
    let ckpt = golden_checkpoint();
    let bytes = ckpt.to_bytes();
    let header = r#"{"step":1500,"kind":"state","spec":{"kind":"state","d":2,"m":1,"horizon":1.0,"embed":2,"hidden":1,"image":null},"normalizer":{"q_center":[0.0,0.0],"q_scale":[1.0,1.0]},"config_digest":"ab","param_count":25}"#;
    let mut expected = Vec::new();
    expected.extend_from_slice(b"TWINCKPT");
    expected.extend_from_slice(&[1, 0, 0, 0]);
    expected.extend_from_slice(&(header.len() as u32).to_le_bytes());
    expected.extend_from_slice(header.as_bytes());
    expected.extend_from_slice(&(-1.0f32).to_le_bytes());
    expected.extend_from_slice(&[0x00, 0x00, 0x00, 0xbf]); // -0.5
    assert_eq!(&bytes[..expected.len()], expected.as_slice());
    assert_eq!(bytes.len(), expected.len() - 8 + 4 * 25);
    assert_eq!(&bytes[..8], MAGIC);
    assert_eq!(CHECKPOINT_VERSION, 1);
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    let mut ckpt = golden_checkpoint();
    ckpt.params[3] = f32::from_bits(0x3f80_0001);
    ckpt.params[4] = -0.0;
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint(&path, Some(RepresentationKind::State)).unwrap();
    assert_eq!(back, ckpt);
    assert!(back.params.iter().zip(&ckpt.params).all(|(a, b)| a.to_bits() == b.to_bits()));

    assert!(matches!(
        load_checkpoint(&path, Some(RepresentationKind::GripperCam)),
        Err(PolicyError::KindMismatch { .. })
    ));
    let bytes = ckpt.to_bytes();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(PolicyError::Format(_))));
    let mut bad = bytes.clone();
    bad[8] = 9;
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(PolicyError::Version { found: 9, .. })));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(PolicyError::Format(_))));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..10]), Err(PolicyError::Format(_))));

    // parameters survive as f32 into the network
    let net = ckpt.to_net().unwrap();
    assert_eq!(net.params[3], f32::from_bits(0x3f80_0001) as f64);
}

#[test]
fn kind_names_parse() {
    for kind in RepresentationKind::ALL {
        assert_eq!(kind.to_string().parse::<RepresentationKind>().unwrap(), kind);
    }
    assert!("depth".parse::<RepresentationKind>().is_err());
}

mod invariants {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn waypoint_encoding_inverts(v in -0.3f64..0.3, qx in -0.2f64..0.2, qy in -0.2f64..0.2, i in 0usize..2) {
            let norm = Normalizer::from_scene(&SceneConfig::pusht());
            let q_obs = [qx, qy];
            let back = norm.waypoint_inverse(i, norm.waypoint(i, v, &q_obs), &q_obs);
            prop_assert!((back - v).abs() < 1e-12);
        }

        #[test]
        fn checkpoint_bytes_round_trip(params in proptest::collection::vec(-1e3f32..1e3, 25), step in 0usize..100_000) {
            let mut spec = NetSpec::new(RepresentationKind::State, 2, None);
            spec.m = 1;
            spec.embed = 2;
            spec.hidden = 1;
            let ckpt = Checkpoint {
                step,
                spec,
                normalizer: Normalizer::from_scene(&SceneConfig::pusht()),
                config_digest: "cd".into(),
                params,
            };
            let bytes = ckpt.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &ckpt);
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
