use std::f64::consts::FRAC_PI_2;

use twinsim_core::math::{Pose, Quat, Vec3};
use twinsim_core::scene::{build_scene, tblock_se2, SceneConfig, CARRIAGE_ID, PUSHER_ID, TBLOCK_ID};
use twinsim_core::twin::{
    compute_correction, sync_error, CorrectionGains, CoupledSystem, FollowerMode, Mode, NoiseModel, Observation,
    ObservedObject, Perturbation, ProxyWorld,
};
use twinsim_core::world::WorldState;
use twinsim_core::{CorrectiveInput, TwinError};

fn scene(seed: u64) -> WorldState {
    build_scene(&SceneConfig::pusht(), seed).unwrap()
}

/// Pusher path that sweeps back and forth through the block's start area
/// while staying well inside the table.
fn sweep(t: f64, _center: [f64; 2]) -> [f64; 2] {
    [0.1 * (t * 1.1).sin(), -0.02 + 0.1 * (t * 0.45).sin()]
}

fn observed(id: u32, pose: Pose) -> ObservedObject {
    ObservedObject {
        id: twinsim_core::BodyId(id),
        pose,
        linear_velocity: Vec3::zeros(),
        angular_velocity: Vec3::zeros(),
        valid: true,
    }
}

fn obs_of(objects: Vec<ObservedObject>) -> Observation {
    Observation {
        timestamp: 0.0,
        rate: 30.0,
        objects,
    }
}

#[test]
fn noiseless_observation_is_ground_truth() {
    let w = scene(1);
    let proxy = ProxyWorld::from_twin(&w, Perturbation::none(), NoiseModel::zero());
    let obs = proxy.observe(7);
    assert_eq!(obs.objects.len(), 1);
    let b = w.body(TBLOCK_ID).unwrap();
    assert_eq!(obs.objects[0].pose, b.pose);
    assert!(obs.objects[0].valid);
    assert_eq!(obs.timestamp, w.time);
}

#[test]
fn position_noise_has_configured_spread() {
    let w = scene(1);
    let noise = NoiseModel {
        dropout: 0.0,
        latency_ticks: 0,
        ..NoiseModel::default()
    };
    let proxy = ProxyWorld::from_twin(&w, Perturbation::none(), noise);
    let truth = w.body(TBLOCK_ID).unwrap().pose.position;
    let n = 10_000;
    let errors: Vec<f64> = (0..n)
        .map(|seed| proxy.observe(seed).objects[0].pose.position.x - truth.x)
        .collect();
    let mean = errors.iter().sum::<f64>() / n as f64;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    assert!((sd - 0.002).abs() / 0.002 < 0.05, "sample sd {sd}");
}

#[test]
fn observation_is_deterministic_in_seed() {
    let w = scene(1);
    let proxy = ProxyWorld::from_twin(&w, Perturbation::none(), NoiseModel::default());
    assert_eq!(proxy.observe(3), proxy.observe(3));
    assert_ne!(proxy.observe(3), proxy.observe(4));
}

#[test]
fn full_dropout_invalidates_everything() {
    let w = scene(1);
    let noise = NoiseModel {
        dropout: 1.0,
        ..NoiseModel::zero()
    };
    let proxy = ProxyWorld::from_twin(&w, Perturbation::none(), noise);
    for seed in 0..20 {
        assert!(proxy.observe(seed).objects.iter().all(|o| !o.valid));
    }
}

#[test]
fn latency_delays_observations() {
    let w = scene(1);
    let noise = NoiseModel {
        latency_ticks: 3,
        ..NoiseModel::zero()
    };
    let mut proxy = ProxyWorld::from_twin(&w, Perturbation::none(), noise);
    proxy.world.body_mut(TBLOCK_ID).unwrap().linear_velocity = Vec3::new(0.3, 0.0, 0.0);
    let mut history = vec![proxy.world.body(TBLOCK_ID).unwrap().pose];
    for _ in 0..6 {
        proxy.step().unwrap();
        history.push(proxy.world.body(TBLOCK_ID).unwrap().pose);
    }
    let obs = proxy.observe(0);
    assert_eq!(obs.objects[0].pose, history[3]);
    assert!((obs.timestamp - 3.0 * w.dt).abs() < 1e-12);
}

#[test]
fn zero_error_gives_zero_wrench() {
    let w = scene(2);
    let b = w.body(TBLOCK_ID).unwrap();
    let u = compute_correction(&w, &obs_of(vec![observed(0, b.pose)]), &CorrectionGains::default());
    assert_eq!(u.entries.len(), 1);
    assert!(u.is_zero());
}

#[test]
fn linear_pd_law() {
    let w = scene(2);
    let mut pose = w.body(TBLOCK_ID).unwrap().pose;
    pose.position += Vec3::new(0.01, 0.0, 0.0);
    let gains = CorrectionGains {
        kp_lin: 50.0,
        ..CorrectionGains::default()
    };
    let u = compute_correction(&w, &obs_of(vec![observed(0, pose)]), &gains);
    let f = u.entries[0].force;
    assert!((f - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-12, "{f:?}");
}

/// Rotation angle and axis from the rotation matrix (trace and skew part),
/// independent of the quaternion path used by the correction law.
fn matrix_axis_angle(r: &nalgebra::Matrix3<f64>) -> Vec3 {
    let angle = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
    let skew = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    skew.normalize() * angle
}

#[test]
fn yaw_error_torque_matches_axis_angle() {
    let w = scene(2);
    let twin_pose = w.body(TBLOCK_ID).unwrap().pose;
    let mut pose = twin_pose;
    pose.orientation = Quat::from_euler_angles(0.0, 0.0, FRAC_PI_2) * twin_pose.orientation;
    let gains = CorrectionGains {
        kp_rot: 2.0,
        torque_cap: 100.0,
        ..CorrectionGains::default()
    };
    let u = compute_correction(&w, &obs_of(vec![observed(0, pose)]), &gains);
    let tau = u.entries[0].torque;
    let rel = pose.orientation.to_rotation_matrix() * twin_pose.orientation.to_rotation_matrix().transpose();
    let expected = matrix_axis_angle(rel.matrix()) * 2.0;
    assert!((tau - expected).norm() < 1e-9, "{tau:?} vs {expected:?}");
    assert!((tau.norm() - 2.0 * FRAC_PI_2).abs() < 1e-9);
    assert!(tau.z > 0.0 && tau.x.abs() < 1e-9 && tau.y.abs() < 1e-9);
}

#[test]
fn robot_links_and_invalid_objects_are_not_corrected() {
    let w = scene(2);
    let far = Pose::from_translation(Vec3::new(1.0, 1.0, 1.0));
    let mut dropped = observed(0, far);
    dropped.valid = false;
    let obs = obs_of(vec![dropped, observed(CARRIAGE_ID.0, far), observed(PUSHER_ID.0, far)]);
    let u = compute_correction(&w, &obs, &CorrectionGains::default());
    assert!(u.entries.iter().all(|e| !w.is_robot_link(e.body)));
    assert!(u.is_zero());
}

#[test]
fn wrenches_respect_caps() {
    let w = scene(2);
    let gains = CorrectionGains::default();
    let mut pose = w.body(TBLOCK_ID).unwrap().pose;
    pose.position += Vec3::new(3.0, -2.0, 0.5);
    pose.orientation = Quat::from_euler_angles(1.0, 2.0, 3.0);
    let mut o = observed(0, pose);
    o.linear_velocity = Vec3::new(50.0, 0.0, 0.0);
    let u = compute_correction(&w, &obs_of(vec![o]), &gains);
    assert!(u.max_force() <= gains.force_cap + 1e-12);
    assert!(u.max_torque() <= gains.torque_cap + 1e-12);
}

#[test]
fn sync_error_rms() {
    let a = scene(3);
    assert_eq!(sync_error(&a, &a), 0.0);
    let mut b = a.clone();
    b.body_mut(TBLOCK_ID).unwrap().pose.position.x += 0.01;
    assert!((sync_error(&a, &b) - 0.01).abs() < 1e-12);

    // two objects: add a second block offset by 0.04 while the first is off by 0.03
    let mut a2 = a.clone();
    let mut extra = a.body(TBLOCK_ID).unwrap().clone();
    extra.id = twinsim_core::BodyId(10);
    extra.pose.position.x += 0.5;
    a2.bodies.push(extra);
    let mut b2 = a2.clone();
    b2.body_mut(TBLOCK_ID).unwrap().pose.position.x += 0.03;
    b2.body_mut(twinsim_core::BodyId(10)).unwrap().pose.position.y += 0.04;
    let expected = ((0.03f64.powi(2) + 0.04f64.powi(2)) / 2.0).sqrt();
    assert!((sync_error(&a2, &b2) - expected).abs() < 1e-12);
    assert!((expected - 0.035355).abs() < 1e-6);
}

#[test]
fn offline_mode_rejects_online_operations() {
    let mut sys = CoupledSystem::offline(scene(1));
    assert_eq!(sys.mode(), Mode::Offline);
    assert!(matches!(sys.follower_tick(), Err(TwinError::Offline)));
    assert!(matches!(sys.sync_error(), Err(TwinError::Offline)));
}

#[test]
fn offline_matches_bare_stepping() {
    let w = scene(4);
    let mut sys = CoupledSystem::offline(w.clone());
    let mut bare = w;
    let center = [tblock_se2(&bare).x, tblock_se2(&bare).y];
    for i in 0..300 {
        let q = sweep(i as f64 * bare.dt, center);
        sys.coupled_step(&q, 99).unwrap();
        bare.set_joint_target(&q).unwrap();
        bare.step(&CorrectiveInput::empty()).unwrap();
    }
    assert_eq!(sys.twin, bare);
}

#[test]
fn follower_rests_when_twin_rests() {
    let w = scene(1);
    let proxy = ProxyWorld::from_twin(&w, Perturbation::none(), NoiseModel::zero());
    let mut sys = CoupledSystem::online(w, proxy, CorrectionGains::default()).unwrap();
    let q0 = sys.proxy().unwrap().world.robot.q.clone();
    for _ in 0..10 {
        sys.follower_tick().unwrap();
    }
    let q = &sys.proxy().unwrap().world.robot.q;
    assert!((q[0] - q0[0]).abs() < 1e-12 && (q[1] - q0[1]).abs() < 1e-12);
}

#[test]
fn follower_tracks_twin_with_lag() {
    let w = scene(1);
    let proxy = ProxyWorld::from_twin(&w, Perturbation::none(), NoiseModel::zero());
    let mut sys = CoupledSystem::online(w, proxy, CorrectionGains::default()).unwrap();
    let start = sys.twin.robot.q.clone();
    let target = [start[0] + 0.05, start[1]];
    let mut gaps = Vec::new();
    for i in 0..90 {
        sys.coupled_step(&target, i).unwrap();
        let twin_q = sys.twin.robot.q[0];
        let proxy_q = sys.proxy().unwrap().world.robot.q[0];
        gaps.push(twin_q - proxy_q);
    }
    // the proxy trails while the twin is moving
    assert!(gaps[..20].iter().all(|g| *g > 0.0), "{:?}", &gaps[..20]);
    let final_gap = gaps.last().unwrap().abs();
    assert!(final_gap < 1e-3, "proxy did not converge: {final_gap}");
}

#[test]
fn topology_mismatch_is_rejected() {
    let w = scene(1);
    let mut other = w.clone();
    other.bodies.retain(|b| b.id != TBLOCK_ID);
    let proxy = ProxyWorld::from_twin(&other, Perturbation::none(), NoiseModel::zero());
    assert!(matches!(
        CoupledSystem::online(w, proxy, CorrectionGains::default()),
        Err(TwinError::Topology(_))
    ));
}

fn run_pair(zero_gap: bool, seconds: f64) -> (WorldState, WorldState, bool) {
    let w = scene(6);
    let mut proxy = ProxyWorld::from_twin(&w, Perturbation::none(), NoiseModel::zero());
    if zero_gap {
        proxy.follower = FollowerMode::Mirror;
    }
    let mut online = CoupledSystem::online(w.clone(), proxy, CorrectionGains::default()).unwrap();
    let mut offline = CoupledSystem::offline(w.clone());
    let center = [tblock_se2(&w).x, tblock_se2(&w).y];
    let mut all_zero = true;
    for i in 0..(seconds * 60.0) as u64 {
        let q = sweep(i as f64 / 60.0, center);
        online.coupled_step(&q, 5).unwrap();
        offline.coupled_step(&q, 5).unwrap();
        all_zero &= online.held_correction().is_zero();
    }
    (online.twin, offline.twin, all_zero)
}

#[test]
fn zero_gap_is_a_fixed_point() {
    let (online, offline, all_zero) = run_pair(true, 10.0);
    assert!(all_zero);
    assert_eq!(online, offline);
    // the script really moves the block
    let start = scene(6);
    let moved = (online.body(TBLOCK_ID).unwrap().pose.position - start.body(TBLOCK_ID).unwrap().pose.position).norm();
    assert!(moved > 0.01, "block moved only {moved}");
}

#[test]
fn lagging_follower_breaks_exact_zero_under_contact() {
    let (_, _, all_zero) = run_pair(false, 10.0);
    assert!(!all_zero);
}

#[test]
fn detach_switches_to_offline() {
    let w = scene(1);
    let proxy = ProxyWorld::from_twin(&w, Perturbation::none(), NoiseModel::zero());
    let mut sys = CoupledSystem::online(w, proxy, CorrectionGains::default()).unwrap();
    assert_eq!(sys.mode(), Mode::Online);
    assert!(sys.detach().is_some());
    assert_eq!(sys.mode(), Mode::Offline);
    assert!(sys.held_correction().is_zero());
}

/// Every 3 s: back off 11 cm behind the block on a line aimed roughly at the
/// table centre, then drive through to the block's position over 0.8 s so
/// it slides free.
#[derive(Default)]
struct Striker {
    from: [f64; 2],
    to: [f64; 2],
}

impl Striker {
    fn act(&mut self, tick: usize, twin: &WorldState) -> [f64; 2] {
        let k = tick / 180;
        let phase = (tick % 180) as f64 / 60.0;
        if tick % 180 == 0 {
            let b = tblock_se2(twin);
            let (dx, dy) = (-b.x, -0.02 - b.y);
            let angle = if dx.hypot(dy) < 0.03 {
                k as f64 * 2.1
            } else {
                dy.atan2(dx) + if k % 2 == 0 { 0.4 } else { -0.4 }
            };
            self.from = [b.x - 0.11 * angle.cos(), b.y - 0.11 * angle.sin()];
            self.to = [b.x, b.y];
        }
        let s = ((phase - 1.2) / 0.8).clamp(0.0, 1.0);
        if phase >= 2.0 {
            return self.from;
        }
        [self.from[0] + s * (self.to[0] - self.from[0]), self.from[1] + s * (self.to[1] - self.from[1])]
    }
}

fn efficacy_run(perturbation: Perturbation, corrected: bool) -> (f64, f64) {
    let w = scene(8);
    let proxy = ProxyWorld::from_twin(&w, perturbation, NoiseModel::default());
    let mut sys = CoupledSystem::online(w, proxy, CorrectionGains::default()).unwrap();
    sys.correction_enabled = corrected;
    let mut striker = Striker::default();
    let mut worst = 0.0f64;
    for i in 0..30 * 60 {
        let q = striker.act(i, &sys.twin);
        sys.coupled_step(&q, 21).unwrap();
        worst = worst.max(sys.sync_error().unwrap());
    }
    (worst, sys.sync_error().unwrap())
}

#[test]
fn correction_keeps_twin_in_sync() {
    for friction_scale in [0.8, 1.2] {
        for mass_scale in [0.9, 1.1] {
            let p = Perturbation {
                friction_scale,
                mass_scale,
                gain_scale: 1.0,
            };
            let (worst, final_on) = efficacy_run(p, true);
            let (_, final_off) = efficacy_run(p, false);
            assert!(worst < 0.02, "{p:?}: corrected worst {worst}");
            assert!(final_off >= 5.0 * final_on, "{p:?}: final {final_on} vs uncorrected {final_off}");
        }
    }
}
