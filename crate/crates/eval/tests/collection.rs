use twinsim_core::demo::{Dataset, DemoSource, Frame};
use twinsim_core::scene::{build_scene, tblock_se2, SceneConfig};
use twinsim_core::twin::Mode;
use twinsim_eval::*;
use twinsim_policy::{train, RepresentationKind, TrainConfig, TrainingSet};

#[test]
fn online_demos_carry_sync_statistics() {
    let scene = SceneConfig::pusht();
    let starts = demo_start_poses(&scene, 4, DEMO_POSE_SEED);
    let (online, _) = collect_demos(&scene, &starts, 2, &CollectConfig::new(Mode::Online)).unwrap();
    let (offline, _) = collect_demos(&scene, &starts, 2, &CollectConfig::new(Mode::Offline)).unwrap();
    assert_eq!(online.len(), 2);
    for d in &online {
        let s = d.sync.unwrap();
        assert!(s.mean <= s.max && s.last <= s.max);
        assert!(s.max < 0.05, "{s:?}");
        assert_eq!(d.demo.header.source, DemoSource::Scripted);
        assert_eq!(d.demo.header.tag.as_deref(), Some("online"));
    }
    assert!(offline.iter().all(|d| d.sync.is_none() && d.demo.header.tag.as_deref() == Some("offline")));
    // recording starts at the requested pose
    assert_eq!(online[0].start, starts[0]);
    let again = collect_demos(&scene, &starts, 2, &CollectConfig::new(Mode::Online)).unwrap().0;
    assert_eq!(again, online);
}

#[test]
fn evaluation_poses_avoid_the_demo_pool() {
    let scene = SceneConfig::pusht();
    let eval = evaluation_poses(&scene, 20);
    assert_eq!(eval.len(), 20);
    assert_eq!(eval, evaluation_poses(&scene, 20));
    for p in demo_start_poses(&scene, DEMO_POSE_POOL, DEMO_POSE_SEED) {
        assert!(!eval.contains(&p));
    }
}

#[test]
fn failure_redemos_start_from_the_failure_state() {
    let scene = SceneConfig::pusht();
    let mut cfg = scene.clone();
    let mut start = scene.target();
    start.x -= 0.06;
    cfg.tblock.initial = Some(start);
    let world = build_scene(&cfg, 0).unwrap();
    let failure = FailureState {
        pose_id: 0,
        repeat: 0,
        stall_time: 5.0,
        block: tblock_se2(&world),
        terminal: Frame::from_world(&world),
    };
    let (demos, failed) = collect_from_failures(&scene, &[failure], &CollectConfig::new(Mode::Online)).unwrap();
    assert!(failed.is_empty());
    let d = &demos[0];
    assert_eq!(d.demo.header.tag.as_deref(), Some("online,augmentation"));
    let (dp, _) = d.start.distance(&start);
    assert!(dp < 1e-3);
}

#[test]
fn training_on_scripted_demos_halves_the_loss() {
    let scene = SceneConfig::pusht();
    let starts = demo_start_poses(&scene, 40, DEMO_POSE_SEED);
    let (demos, _) = collect_demos(&scene, &starts, 30, &CollectConfig::new(Mode::Offline)).unwrap();
    assert_eq!(demos.len(), 30);
    let demos: Vec<_> = demos.into_iter().map(|d| d.demo).collect();
    let dataset = Dataset::from_demos(&demos, 1.0, 32).unwrap();
    let set = TrainingSet::new(RepresentationKind::State, &scene, &dataset.pairs).unwrap();
    let config = TrainConfig {
        steps: 2000,
        checkpoints: vec![2000],
        ..TrainConfig::default()
    };
    let out = train(&set, &config).unwrap();
    let first = out.log.first().unwrap().loss_ema;
    let last = out.log.last().unwrap().loss_ema;
    assert!(last <= 0.5 * first, "loss EMA {first} -> {last}");
}
