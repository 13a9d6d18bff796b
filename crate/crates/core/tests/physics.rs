use twinsim_core::body::{Body, BodyId, Sphere};
use twinsim_core::math::{Pose, Quat, Se2, Vec3};
use twinsim_core::robot::{RobotModel, RobotState};
use twinsim_core::scene::{build_scene, tblock_se2, SceneConfig, TBLOCK_ID};
use twinsim_core::world::{PhysicsParams, Table, WorldState, DEFAULT_DT};
use twinsim_core::{CorrectiveInput, PhysicsError, SceneError};

fn ball(id: u32, position: Vec3, radius: f64, mass: f64) -> Body {
    let sphere = Sphere {
        offset: Vec3::zeros(),
        radius,
        color: [200, 200, 200],
    };
    let (mut b, _) = Body::from_spheres(BodyId(id), format!("ball{id}"), mass, vec![sphere]);
    b.pose = Pose::from_translation(position);
    b
}

fn free_world(bodies: Vec<Body>, gravity: bool, table: bool) -> WorldState {
    let mut physics = PhysicsParams::default();
    if !gravity {
        physics.gravity = Vec3::zeros();
    }
    let table = table.then(|| Table {
        height: 0.0,
        half_extent: [1.0, 1.0],
        friction: 0.5,
        restitution: 0.0,
        color: [200; 3],
    });
    WorldState::new(bodies, RobotModel::empty(), RobotState::at_rest(vec![]), table, physics, DEFAULT_DT).unwrap()
}

fn none() -> CorrectiveInput {
    CorrectiveInput::empty()
}

#[test]
fn free_inertial_motion() {
    let mut b = ball(0, Vec3::zeros(), 0.05, 1.0);
    b.linear_velocity = Vec3::new(1.0, 0.0, 0.0);
    let mut w = free_world(vec![b], false, false);
    w.step(&none()).unwrap();
    let p = w.bodies[0].pose.position;
    assert!((p.x - 1.0 / 60.0).abs() < 1e-12);
    assert_eq!(p.y, 0.0);
    assert_eq!(p.z, 0.0);
    assert!((w.time - 1.0 / 60.0).abs() < 1e-15);
}

#[test]
fn ballistic_drop_matches_closed_form() {
    let mut w = free_world(vec![ball(0, Vec3::new(0.0, 0.0, 10.0), 0.05, 1.0)], true, false);
    for _ in 0..60 {
        w.step(&none()).unwrap();
    }
    let drop = 10.0 - w.bodies[0].pose.position.z;
    let analytic = 0.5 * 9.81 * 1.0f64.powi(2);
    assert!((drop - analytic).abs() / analytic < 0.02, "drop {drop} vs {analytic}");
}

#[test]
fn force_impulse_changes_velocity() {
    let mut w = free_world(vec![ball(0, Vec3::zeros(), 0.05, 1.0)], false, false);
    w.apply_wrench(BodyId(0), Vec3::new(3.0, 0.0, 0.0), Vec3::zeros()).unwrap();
    w.step(&none()).unwrap();
    let v = w.bodies[0].linear_velocity;
    assert!((v.x - 3.0 * DEFAULT_DT).abs() < 1e-9);
    // cleared after one step
    w.step(&none()).unwrap();
    assert!((w.bodies[0].linear_velocity.x - 3.0 * DEFAULT_DT).abs() < 1e-9);
}

#[test]
fn zero_wrench_is_identity() {
    let base = free_world(vec![ball(0, Vec3::new(0.0, 0.0, 1.0), 0.05, 1.0)], true, true);
    let mut a = base.clone();
    a.apply_wrench(BodyId(0), Vec3::zeros(), Vec3::zeros()).unwrap();
    a.step(&none()).unwrap();
    let b = base.stepped(&none()).unwrap();
    assert_eq!(a.bodies, b.bodies);
}

#[test]
fn unknown_body_wrench_is_rejected() {
    let mut w = free_world(vec![ball(0, Vec3::zeros(), 0.05, 1.0)], false, false);
    assert!(matches!(
        w.apply_wrench(BodyId(9), Vec3::zeros(), Vec3::zeros()),
        Err(PhysicsError::UnknownBody(BodyId(9)))
    ));
}

#[test]
fn opposite_forces_conserve_momentum() {
    let mut w = free_world(
        vec![ball(0, Vec3::zeros(), 0.05, 1.0), ball(1, Vec3::new(1.0, 0.0, 0.0), 0.05, 1.0)],
        false,
        false,
    );
    let f = Vec3::new(2.0, -1.0, 0.5);
    w.apply_wrench(BodyId(0), f, Vec3::zeros()).unwrap();
    w.apply_wrench(BodyId(1), -f, Vec3::zeros()).unwrap();
    w.step(&none()).unwrap();
    assert!(w.linear_momentum().norm() < 1e-12);
}

fn collide(offset_y: f64) -> (Vec3, Vec3) {
    let mut a = ball(0, Vec3::new(-0.2, 0.0, 0.0), 0.05, 1.0);
    let mut b = ball(1, Vec3::new(0.0, offset_y, 0.0), 0.05, 2.0);
    a.linear_velocity = Vec3::new(1.5, 0.0, 0.0);
    b.linear_velocity = Vec3::new(-0.3, 0.0, 0.0);
    for x in [&mut a, &mut b] {
        x.friction = 0.0;
    }
    let mut w = free_world(vec![a, b], false, false);
    let before = w.linear_momentum();
    for _ in 0..40 {
        w.step(&none()).unwrap();
    }
    (before, w.linear_momentum())
}

#[test]
fn frictionless_impacts_conserve_momentum() {
    for offset in [0.0, 0.03, 0.07] {
        let (before, after) = collide(offset);
        let rel = (after - before).norm() / before.norm();
        assert!(rel < 0.01, "offset {offset}: {before:?} -> {after:?}");
    }
}

#[test]
fn impact_actually_happens() {
    let (_, _) = collide(0.0);
    let mut a = ball(0, Vec3::new(-0.2, 0.0, 0.0), 0.05, 1.0);
    a.linear_velocity = Vec3::new(1.5, 0.0, 0.0);
    let b = ball(1, Vec3::zeros(), 0.05, 1.0);
    let mut w = free_world(vec![a, b], false, false);
    for _ in 0..40 {
        w.step(&none()).unwrap();
    }
    assert!(w.bodies[1].linear_velocity.x > 0.5);
}

#[test]
fn resting_contacts_stay_within_tolerance() {
    let config = SceneConfig::pusht();
    let mut w = build_scene(&config, 3).unwrap();
    for i in 0..600 {
        w.step(&none()).unwrap();
        assert!(w.max_penetration() <= 1e-4, "step {i}: {}", w.max_penetration());
    }
    let b = w.body(TBLOCK_ID).unwrap();
    assert!(b.linear_velocity.norm() < 1e-3);
}

#[test]
fn sliding_block_stops_at_coulomb_distance() {
    let config = SceneConfig::pusht();
    let mut w = build_scene(&config, 3).unwrap();
    for _ in 0..30 {
        w.step(&none()).unwrap();
    }
    let v0 = 0.3;
    let x0 = w.body(TBLOCK_ID).unwrap().pose.position.x;
    w.body_mut(TBLOCK_ID).unwrap().linear_velocity = Vec3::new(v0, 0.0, 0.0);
    for _ in 0..120 {
        w.step(&none()).unwrap();
    }
    let b = w.body(TBLOCK_ID).unwrap();
    assert!(b.linear_velocity.norm() < 1e-6, "still sliding: {}", b.linear_velocity);
    let mu = 0.5 * (config.tblock.friction + config.table.friction);
    // Each step drifts at the pre-friction speed, then loses mu g dt: the
    // discrete sum exceeds v0^2 / (2 mu g) by about v0 dt / 2.
    let dv = mu * 9.81 * w.dt;
    let expected: f64 = (0..).map(|k| v0 - k as f64 * dv).take_while(|v| *v > 0.0).sum::<f64>() * w.dt;
    let travelled = b.pose.position.x - x0;
    assert!((travelled - expected).abs() < 0.05 * expected, "{travelled} vs {expected}");
}

#[test]
fn sphere_stack_rests_on_table() {
    let r = 0.02;
    let bodies = vec![
        ball(0, Vec3::new(0.0, 0.0, r), r, 0.1),
        ball(1, Vec3::new(0.0, 0.0, 3.0 * r), r, 0.1),
    ];
    let mut w = free_world(bodies, true, true);
    for i in 0..300 {
        w.step(&none()).unwrap();
        assert!(w.max_penetration() <= 1e-4, "step {i}: {}", w.max_penetration());
    }
}

#[test]
fn robot_links_ignore_gravity() {
    let mut w = build_scene(&SceneConfig::pusht(), 1).unwrap();
    let before: Vec<Pose> = w.robot_model.links.iter().map(|id| w.body(*id).unwrap().pose).collect();
    for _ in 0..120 {
        w.step(&none()).unwrap();
    }
    for (id, p) in w.robot_model.links.iter().zip(before) {
        let now = w.body(*id).unwrap().pose.position;
        assert!((now - p.position).norm() < 1e-9, "link {id} moved");
    }
}

#[test]
fn pd_holds_current_configuration() {
    let mut w = build_scene(&SceneConfig::pusht(), 1).unwrap();
    let q = w.robot.q.clone();
    w.set_joint_target(&q).unwrap();
    for _ in 0..60 {
        w.step(&none()).unwrap();
        for j in 0..2 {
            assert!((w.robot.q[j] - w.robot.q_desired[j]).abs() < 1e-3);
        }
    }
}

#[test]
fn joint_target_is_clamped() {
    let mut w = build_scene(&SceneConfig::pusht(), 1).unwrap();
    w.set_joint_target(&[5.0, -5.0]).unwrap();
    let limits: Vec<[f64; 2]> = w.robot_model.joints.iter().map(|j| j.limits).collect();
    assert_eq!(w.robot.q_desired, vec![limits[0][1], limits[1][0]]);
    assert!(matches!(
        w.set_joint_target(&[0.0]),
        Err(PhysicsError::Dimension { expected: 2, got: 1 })
    ));
}

#[test]
fn step_response_settles_without_overshoot() {
    for joint in 0..2 {
        let mut w = build_scene(&SceneConfig::pusht(), 1).unwrap();
        // keep the pusher clear of the block
        w.bodies.retain(|b| b.id != TBLOCK_ID);
        let mut target = w.robot.q.clone();
        let start = target[joint];
        target[joint] += 0.05;
        w.set_joint_target(&target).unwrap();
        let mut settled_at = None;
        let mut peak = 0.0f64;
        for i in 1..=120 {
            w.step(&none()).unwrap();
            let progress = (w.robot.q[joint] - start) / 0.05;
            peak = peak.max(progress);
            let within = (progress - 1.0).abs() <= 0.01;
            match (within, settled_at) {
                (true, None) => settled_at = Some(i),
                (false, Some(_)) => settled_at = None,
                _ => {}
            }
        }
        let t = settled_at.expect("settles") as f64 * DEFAULT_DT;
        assert!(t < 0.5, "joint {joint} settles at {t}");
        assert!(peak <= 1.05, "joint {joint} overshoot {peak}");
        assert!(w.joint_residual() <= 1e-5);
    }
}

#[test]
fn joint_residual_during_contact_rich_pushing() {
    let config = SceneConfig::pusht();
    let mut w = build_scene(&config, 4).unwrap();
    let block = tblock_se2(&w);
    for i in 0..600 {
        let t = i as f64 * DEFAULT_DT;
        // sweep the pusher through the block and back
        let x = block.x + 0.15 * (t * 1.3).sin();
        let y = block.y - 0.1 + 0.12 * (t * 0.7).sin();
        w.set_joint_target(&[x, y]).unwrap();
        w.step(&none()).unwrap();
        assert!(w.joint_residual() <= 1e-5, "step {i}: {}", w.joint_residual());
    }
}

#[test]
fn quaternions_stay_normalized() {
    let mut b = ball(0, Vec3::zeros(), 0.05, 1.0);
    let (mut c, _) = Body::from_spheres(
        BodyId(1),
        "dumbbell",
        1.0,
        vec![
            Sphere {
                offset: Vec3::new(0.1, 0.0, 0.0),
                radius: 0.03,
                color: [0; 3],
            },
            Sphere {
                offset: Vec3::new(-0.1, 0.02, 0.0),
                radius: 0.05,
                color: [0; 3],
            },
        ],
    );
    c.pose = Pose::new(Vec3::new(1.0, 0.0, 0.0), Quat::from_euler_angles(0.3, 0.2, 0.1));
    b.angular_velocity = Vec3::new(3.0, -7.0, 11.0);
    c.angular_velocity = Vec3::new(5.0, 1.0, -4.0);
    let mut w = free_world(vec![b, c], false, false);
    for _ in 0..10_000 {
        w.step(&none()).unwrap();
    }
    for body in &w.bodies {
        assert!((body.pose.orientation.norm() - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn stepping_is_deterministic() {
    let config = SceneConfig::pusht();
    let run = || {
        let mut w = build_scene(&config, 11).unwrap();
        for i in 0..200 {
            let x = 0.1 * (i as f64 * 0.05).sin();
            w.set_joint_target(&[x, -0.05]).unwrap();
            w.step(&none()).unwrap();
        }
        w
    };
    let (a, b) = (run(), run());
    assert_eq!(a.bodies, b.bodies);
    assert_eq!(a.robot, b.robot);
}

#[test]
fn divergence_reports_last_finite_state() {
    let mut w = free_world(vec![ball(0, Vec3::zeros(), 0.05, 1.0)], false, false);
    w.apply_wrench(BodyId(0), Vec3::new(f64::INFINITY, 0.0, 0.0), Vec3::zeros()).unwrap();
    match w.step(&none()) {
        Err(PhysicsError::Diverged { last, .. }) => assert_eq!(last.time, 0.0),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn default_scene_layout() {
    let config = SceneConfig::pusht();
    let w = build_scene(&config, 0).unwrap();
    assert!(w.body(TBLOCK_ID).unwrap().spheres.len() >= 10);
    assert_eq!(w.robot_model.dof(), 2);
    assert_eq!(w.objects().count(), 1);
    assert!(w.body(twinsim_core::scene::PUSHER_ID).is_some());
    assert_eq!(w.robot.q, config.robot.home.to_vec());
}

#[test]
fn scene_build_is_deterministic_per_seed() {
    let config = SceneConfig::pusht();
    let a = build_scene(&config, 42).unwrap();
    let b = build_scene(&config, 42).unwrap();
    let c = build_scene(&config, 43).unwrap();
    assert_eq!(a.bodies, b.bodies);
    assert_ne!(a.bodies, c.bodies);
}

#[test]
fn block_at_target_is_at_target() {
    let mut config = SceneConfig::pusht();
    config.tblock.initial = Some(config.tblock.target);
    let w = build_scene(&config, 0).unwrap();
    let (dp, dtheta) = tblock_se2(&w).distance(&config.target());
    assert!(dp < 1e-12 && dtheta < 1e-12);
}

#[test]
fn overlapping_start_names_bodies() {
    let mut config = SceneConfig::pusht();
    config.tblock.initial = Some(Se2::new(config.robot.home[0], config.robot.home[1], 0.0));
    match build_scene(&config, 0) {
        Err(SceneError::Overlap { a, b, .. }) => {
            let names = [a, b];
            assert!(names.iter().any(|n| n.contains("tblock")), "{names:?}");
            assert!(names.iter().any(|n| n.contains("pusher")), "{names:?}");
        }
        other => panic!("expected overlap, got {other:?}"),
    }
}

#[test]
fn scene_config_round_trips_as_text() {
    let config = SceneConfig::pusht();
    let back = SceneConfig::from_json(&config.to_json()).unwrap();
    assert_eq!(back, config);
    assert_eq!(back.digest(), config.digest());
}
