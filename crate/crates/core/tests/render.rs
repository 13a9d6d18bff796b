use twinsim_core::body::{Body, BodyId, Sphere};
use twinsim_core::math::{Pose, Quat, Vec3};
use twinsim_core::render::{
    downsample, render, resolve_camera_pose, Camera, CameraMount, Image, Intrinsics, RenderError, BACKGROUND,
};
use twinsim_core::robot::{RobotModel, RobotState};
use twinsim_core::scene::{build_scene, SceneConfig, PUSHER_ID};
use twinsim_core::world::{PhysicsParams, WorldState, DEFAULT_DT};
use twinsim_core::CorrectiveInput;

fn ball(id: u32, position: Vec3, radius: f64, color: [u8; 3]) -> Body {
    let s = Sphere {
        offset: Vec3::zeros(),
        radius,
        color,
    };
    let (mut b, _) = Body::from_spheres(BodyId(id), format!("ball{id}"), 1.0, vec![s]);
    b.pose = Pose::from_translation(position);
    b
}

fn world_of(bodies: Vec<Body>) -> WorldState {
    WorldState::new(
        bodies,
        RobotModel::empty(),
        RobotState::at_rest(vec![]),
        None,
        PhysicsParams::default(),
        DEFAULT_DT,
    )
    .unwrap()
}

/// Identity orientation: optical axis along world +z, image x along world x.
fn axis_camera(size: u32, focal: f64) -> Camera {
    Camera {
        intrinsics: Intrinsics::centered(size, focal),
        mount: CameraMount::World(Pose::identity()),
    }
}

#[test]
fn empty_world_is_background() {
    let img = render(&world_of(vec![]), &axis_camera(16, 16.0)).unwrap();
    assert_eq!(img, Image::filled(16, 16, BACKGROUND));
}

#[test]
fn sphere_projects_to_pinhole_radius() {
    for (r, z, fx) in [(0.05, 1.0, 100.0), (0.02, 0.5, 200.0), (0.1, 2.0, 150.0)] {
        let img = render(&world_of(vec![ball(0, Vec3::new(0.0, 0.0, z), r, [255, 0, 0])]), &axis_camera(64, fx)).unwrap();
        let row = 32;
        let covered = (0..64).filter(|&x| img.pixel(x, row) != BACKGROUND).count() as f64;
        let expected = fx * r / z;
        assert!((covered / 2.0 - expected).abs() <= 1.0, "r={r} z={z}: {covered} px vs radius {expected}");
        assert_ne!(img.pixel(32, 32), BACKGROUND);
        assert_eq!(img.pixel(0, 0), BACKGROUND);
    }
}

#[test]
fn nearer_sphere_occludes_farther() {
    let near = ball(0, Vec3::new(0.0, 0.0, 1.0), 0.05, [255, 0, 0]);
    let far = ball(1, Vec3::new(0.0, 0.0, 1.5), 0.2, [0, 0, 255]);
    let img = render(&world_of(vec![far.clone(), near.clone()]), &axis_camera(64, 64.0)).unwrap();
    let c = img.pixel(32, 32);
    assert!(c[0] > 0 && c[2] == 0, "center pixel {c:?}");
    // far sphere still visible around the near one
    assert!(img.pixel(32, 5)[2] > 0);
    // order of bodies does not matter
    let mut swapped = world_of(vec![near, far]);
    swapped.bodies.reverse();
    swapped.bodies.sort_by_key(|b| b.id);
    assert_eq!(render(&swapped, &axis_camera(64, 64.0)).unwrap(), img);
}

#[test]
fn camera_pose_resolution() {
    let w = build_scene(&SceneConfig::pusht(), 0).unwrap();
    let fixed = Pose::new(Vec3::new(1.0, 2.0, 3.0), Quat::from_euler_angles(0.1, 0.2, 0.3));
    let cam = Camera {
        intrinsics: Intrinsics::centered(8, 8.0),
        mount: CameraMount::World(fixed),
    };
    assert_eq!(resolve_camera_pose(&cam, &w).unwrap(), fixed);

    let link_pose = w.body(PUSHER_ID).unwrap().pose;
    let mounted = |extrinsic| Camera {
        intrinsics: Intrinsics::centered(8, 8.0),
        mount: CameraMount::Link {
            link: PUSHER_ID,
            extrinsic,
        },
    };
    assert_eq!(resolve_camera_pose(&mounted(Pose::identity()), &w).unwrap(), link_pose);

    let mut tilted = w.clone();
    let rot = Quat::from_euler_angles(0.0, 0.0, 0.7);
    tilted.body_mut(PUSHER_ID).unwrap().pose.orientation = rot;
    let got = resolve_camera_pose(&mounted(Pose::from_translation(Vec3::new(0.1, 0.0, 0.0))), &tilted).unwrap();
    let expected = link_pose.position + Vec3::new(0.1 * 0.7f64.cos(), 0.1 * 0.7f64.sin(), 0.0);
    assert!((got.position - expected).norm() < 1e-12);

    let bad = Camera {
        intrinsics: Intrinsics::centered(8, 8.0),
        mount: CameraMount::Link {
            link: BodyId(0),
            extrinsic: Pose::identity(),
        },
    };
    assert!(matches!(resolve_camera_pose(&bad, &w), Err(RenderError::UnknownLink(_))));
}

#[test]
fn downsample_rules() {
    let mut img = Image::filled(2, 2, [0, 0, 0]);
    img.data[0..3].copy_from_slice(&[255; 3]);
    img.data[9..12].copy_from_slice(&[255; 3]);
    let one = downsample(&img, 1, 1).unwrap();
    // (255 + 255 + 0 + 0) / 4 = 127.5, rounded half up
    assert_eq!(one.pixel(0, 0), [128; 3]);

    assert_eq!(downsample(&img, 2, 2).unwrap(), img);
    let flat = Image::filled(12, 9, [10, 20, 30]);
    for (w, h) in [(1, 1), (5, 4), (12, 9), (7, 2)] {
        assert_eq!(downsample(&flat, w, h).unwrap(), Image::filled(w, h, [10, 20, 30]));
    }
    assert!(downsample(&flat, 13, 9).is_err());
    assert!(downsample(&flat, 0, 9).is_err());
}

#[test]
fn ppm_golden_bytes() {
    let mut img = Image::filled(2, 1, [1, 2, 3]);
    img.data[3..6].copy_from_slice(&[250, 251, 252]);
    let mut bytes = Vec::new();
    img.write_ppm(&mut bytes).unwrap();
    let golden: &[u8] = b"P6\n2 1\n255\n\x01\x02\x03\xfa\xfb\xfc";
    assert_eq!(bytes, golden);
    assert_eq!(Image::read_ppm(golden).unwrap(), img);
    assert!(Image::read_ppm(&b"P6\n2 2\n255\n\x01"[..]).is_err());
}

#[test]
fn scene_render_round_trips_through_ppm() {
    let config = SceneConfig::pusht();
    let w = build_scene(&config, 5).unwrap();
    let img = render(&w, &config.cameras.static_cam).unwrap();
    let mut bytes = Vec::new();
    img.write_ppm(&mut bytes).unwrap();
    assert_eq!(Image::read_ppm(bytes.as_slice()).unwrap(), img);
    assert_eq!(render(&w, &config.cameras.static_cam).unwrap(), img);
}

#[test]
fn visible_bodies_contribute_pixels() {
    let config = SceneConfig::pusht();
    for seed in 0..5 {
        let w = build_scene(&config, seed).unwrap();
        let full = render(&w, &config.cameras.static_cam).unwrap();
        let cam_pose = resolve_camera_pose(&config.cameras.static_cam, &w).unwrap();
        let k = config.cameras.static_cam.intrinsics;
        let mut seen = Vec::new();
        for body in &w.bodies {
            let in_view = (0..body.spheres.len()).any(|s| {
                let c = cam_pose.inverse_transform_point(&body.sphere_center(s));
                let (u, v) = (k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy);
                c.z > 0.0 && u >= 0.0 && v >= 0.0 && u < k.width as f64 && v < k.height as f64
            });
            let mut without = w.clone();
            without.bodies.retain(|b| b.id != body.id);
            let changed = render(&without, &config.cameras.static_cam).unwrap() != full;
            if in_view {
                assert!(changed, "seed {seed}: {} is in view but invisible", body.name);
                seen.push(body.name.clone());
            }
        }
        assert!(seen.contains(&"tblock".to_string()) && seen.contains(&"pusher".to_string()));
    }
}

#[test]
fn gripper_view_follows_robot() {
    let config = SceneConfig::pusht();
    let mut w = build_scene(&config, 2).unwrap();
    let cams = &config.cameras;
    let (g0, s0) = (render(&w, &cams.gripper_cam).unwrap(), render(&w, &cams.static_cam).unwrap());
    for _ in 0..30 {
        w.step(&CorrectiveInput::empty()).unwrap();
    }
    assert_eq!(render(&w, &cams.static_cam).unwrap(), s0, "static scene must render identically");
    assert_eq!(render(&w, &cams.gripper_cam).unwrap(), g0);

    let q = w.robot.q.clone();
    w.set_configuration(&[q[0] + 0.05, q[1]], &[]).unwrap();
    assert_ne!(render(&w, &cams.gripper_cam).unwrap(), g0);
}
