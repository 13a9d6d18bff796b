use std::path::Path;
use std::process::{Command, Output};

fn twinsim(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twinsim"))
        .args(args)
        .env("TWINSIM_DATA_DIR", data)
        .output()
        .unwrap()
}

fn ok(data: &Path, args: &[&str]) -> String {
    let out = twinsim(data, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(twinsim(dir.path(), &["collect"]).status.code(), Some(2));
    assert_eq!(twinsim(dir.path(), &["train", "--rep", "sonar"]).status.code(), Some(2));
    assert_eq!(twinsim(dir.path(), &["eval", "--name", "x", "--mode", "real"]).status.code(), Some(2));
}

#[test]
fn training_without_demos_fails_with_a_clear_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = twinsim(dir.path(), &["train", "--rep", "state"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty dataset"));
}

#[test]
fn scripted_collection_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path();
    ok(data, &["scene", "build"]);
    let scene = std::fs::read(data.join("scene.json")).unwrap();
    ok(data, &["scene", "build"]);
    assert_eq!(std::fs::read(data.join("scene.json")).unwrap(), scene);

    let summary = ok(data, &["collect", "--source", "scripted", "--mode", "online", "-n", "2"]);
    assert!(summary.starts_with("file,start_x,start_y,start_theta,duration_s,sync_mean,sync_max,sync_last\n"));
    let first = read_dir_bytes(&data.join("demos"));
    assert_eq!(first.len(), 2);
    ok(data, &["collect", "--source", "scripted", "--mode", "online", "-n", "2"]);
    assert_eq!(read_dir_bytes(&data.join("demos")), first);

    let listing = ok(data, &["collect", "--list"]);
    let rows: Vec<_> = listing.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.contains(",scripted,online,")), "{listing}");
}

#[test]
fn train_eval_sweep_augment_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path();
    ok(data, &["collect", "--source", "scripted", "--mode", "offline", "-n", "2"]);
    ok(data, &["train", "--rep", "state", "--name", "tiny", "--steps", "20", "--checkpoints", "10,20"]);
    let ckpts = data.join("checkpoints/tiny");
    assert!(ckpts.join("step-000010.ckpt").exists());
    assert!(ckpts.join("step-000020.ckpt").exists());
    assert!(std::fs::read_to_string(ckpts.join("train_log.csv")).unwrap().lines().count() > 1);

    let eval = ["eval", "--name", "tiny", "--mode", "virtual", "--poses", "1", "--repeats", "1", "--envs", "1"];
    let csv = ok(data, &eval);
    assert!(csv.starts_with("checkpoint,mode,rate,ci_lo,ci_hi,wallclock_s\ntiny@20,virtual,"), "{csv}");
    let report = data.join("reports/eval-tiny-000020-virtual.json");
    assert!(report.exists());

    let sweep = ok(data, &["sweep", "--name", "tiny", "--poses", "1", "--repeats", "1", "--envs", "1"]);
    assert_eq!(sweep.lines().filter(|l| l.starts_with("tiny@")).count(), 4);
    assert!(sweep.contains("spearman"));
    assert!(data.join("reports/sweep-tiny.json").exists());

    let out = ok(data, &["augment", "--report", report.to_str().unwrap()]);
    assert!(out.starts_with("harvested "), "{out}");
    assert!(data.join("failures.json").exists());
}
