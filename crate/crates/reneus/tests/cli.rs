use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reneus::checkpoint::Checkpoint;
use reneus::dataset;
use reneus::pipeline::{self, parse_root_linear};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn reneus(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reneus"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = reneus(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small f64 training settings shared by the pipeline tests.
const QUICK: &[&str] = &[
    "-s",
    "train.precision=f64",
    "-s",
    "train.iterations=100",
    "-s",
    "train.init.max_steps=300",
    "-s",
    "train.init.radius=0.3",
    "-s",
    "extract.resolution=48",
];

fn forge(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&["forge", "-c", s(&config("sphere_in_box.toml")), "-o", s(&data)]);
    data
}

/// Checkpoint and mesh bytes after 100 steps.
fn train_extract(dir: &Path, data: &Path) -> (Vec<u8>, Vec<u8>) {
    let cfg = config("sphere_in_box.toml");
    let run = dir.join("run");
    let mut args = vec!["train", "-c", s(&cfg), "-d", s(data), "-o", s(&run)];
    args.extend_from_slice(QUICK);
    ok(&args);
    let ck = pipeline::checkpoint_path(&run, 100);
    let mesh = dir.join("mesh");
    let mut args = vec!["extract", "-c", s(&cfg), "--checkpoint", s(&ck), "-d", s(data), "-o", s(&mesh)];
    args.extend_from_slice(QUICK);
    ok(&args);
    (fs::read(&ck).unwrap(), fs::read(mesh.join("mesh.obj")).unwrap())
}

#[test]
fn forge_writes_a_valid_compact_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let data = forge(tmp.path());
    let (d, m) = dataset::read_dataset(&data).unwrap();
    assert_eq!(d.views.len(), 20);
    assert_eq!(m.views.len(), 20);
    assert!(dataset::disk_usage(&data).unwrap() < 5 * 1024 * 1024);
    assert!(data.join("config.resolved.toml").exists());
}

#[test]
fn all_bundled_configs_load() {
    let tmp = tempfile::tempdir().unwrap();
    for name in [
        "sphere_in_box.toml",
        "torus_in_box.toml",
        "sphere_no_box.toml",
        "neus_plus.toml",
        "no_sparsity.toml",
    ] {
        let out = tmp.path().join(name);
        ok(&["trace-debug", "-c", s(&config(name)), "--ray", "0,-5,0,0,1,0", "-o", s(&out)]);
        assert!(out.join("trace.txt").exists(), "{name}");
    }
}

#[test]
fn trace_debug_empty_box_center() {
    let tmp = tempfile::tempdir().unwrap();
    let text = ok(&[
        "trace-debug",
        "--interior",
        "empty",
        "--ray",
        "0,-5,0,0,1,0",
        "-o",
        s(tmp.path()),
    ]);
    let c = parse_root_linear(&text).unwrap();
    for v in c {
        assert!((v - 0.773922).abs() < 1e-5, "{v}");
    }
    assert_eq!(fs::read_to_string(tmp.path().join("trace.txt")).unwrap(), text);
}

#[test]
fn trace_debug_by_pixel() {
    let tmp = tempfile::tempdir().unwrap();
    let text = ok(&["trace-debug", "--view", "3", "--pixel", "48,48", "-o", s(tmp.path())]);
    assert!(text.contains("root 8-bit"));
    let bad = reneus(&["trace-debug", "--view", "3", "--pixel", "96,0", "-o", s(&tmp.path().join("x"))]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn config_errors_exit_two_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let r = reneus(&["forge", "-s", "train.no_such_key=1", "-o", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("no_such_key"));
    assert!(!out.exists());

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[scene]\nnum_views = 0\n").unwrap();
    let r = reneus(&["forge", "-c", s(&bad), "-o", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());

    let r = reneus(&["forge", "-c", s(&tmp.path().join("missing.toml")), "-o", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());

    assert_eq!(reneus(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let r = reneus(&["train", "-d", s(&tmp.path().join("nowhere")), "-o", s(&tmp.path().join("o"))]);
    assert_eq!(r.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&r.stderr).contains("nowhere"));
}

#[test]
fn pipeline_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = forge(a.path());
    let db = forge(b.path());
    assert_eq!(
        fs::read(da.join(dataset::MANIFEST)).unwrap(),
        fs::read(db.join(dataset::MANIFEST)).unwrap()
    );
    let ma = train_extract(a.path(), &da);
    let mb = train_extract(b.path(), &db);
    assert!(ma.0 == mb.0, "checkpoints differ");
    assert!(!ma.1.is_empty());
    assert!(ma.1 == mb.1, "meshes differ");
}

#[test]
fn resume_continues_and_checkpoints_follow_the_cadence() {
    let tmp = tempfile::tempdir().unwrap();
    let data = forge(tmp.path());
    let cfg = config("sphere_in_box.toml");
    let every = ["-s", "schedule.checkpoint_every=25", "-s", "schedule.validate_every=50"];
    let full = tmp.path().join("full");
    let mut args = vec!["train", "-c", s(&cfg), "-d", s(&data), "-o", s(&full)];
    args.extend_from_slice(QUICK);
    args.extend_from_slice(&every);
    ok(&args);
    for it in [25, 50, 75, 100] {
        assert!(pipeline::checkpoint_path(&full, it).exists(), "{it}");
    }
    assert!(full.join("validation/iter_00000050.png").exists());
    let rows = fs::read_to_string(full.join(pipeline::METRICS)).unwrap();
    assert_eq!(rows.lines().next().unwrap(), pipeline::METRICS_HEADER);
    assert_eq!(rows.lines().count(), 101);

    let resumed = tmp.path().join("resumed");
    let mid = pipeline::checkpoint_path(&full, 50);
    let mut args = vec!["train", "-c", s(&cfg), "-d", s(&data), "-o", s(&resumed), "--resume", s(&mid)];
    args.extend_from_slice(QUICK);
    args.extend_from_slice(&every);
    ok(&args);
    let a = Checkpoint::load(&pipeline::checkpoint_path(&full, 100)).unwrap();
    let b = Checkpoint::load(&pipeline::checkpoint_path(&resumed, 100)).unwrap();
    assert_eq!(a, b);
    let tail: Vec<_> = rows.lines().skip(51).map(|l| l.rsplit_once(',').unwrap().0).collect();
    let again = fs::read_to_string(resumed.join(pipeline::METRICS)).unwrap();
    let again: Vec<_> = again.lines().skip(1).map(|l| l.rsplit_once(',').unwrap().0).collect();
    assert_eq!(tail, again);
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    ok(&["forge", "-c", s(&config("torus_in_box.toml")), "-s", "scene.seed=9", "-o", s(&first)]);
    let snap = first.join("config.resolved.toml");
    let second = tmp.path().join("second");
    ok(&["forge", "-c", s(&snap), "-o", s(&second)]);
    assert_eq!(
        fs::read(first.join(dataset::MANIFEST)).unwrap(),
        fs::read(second.join(dataset::MANIFEST)).unwrap()
    );
    assert_eq!(fs::read(&snap).unwrap(), fs::read(second.join("config.resolved.toml")).unwrap());
}

#[test]
fn render_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let data = forge(tmp.path());
    let cfg = config("sphere_in_box.toml");
    let run = tmp.path().join("run");
    let mut args = vec!["train", "-c", s(&cfg), "-d", s(&data), "-o", s(&run), "-s", "train.iterations=5"];
    args.extend_from_slice(&QUICK[4..6]);
    ok(&args);
    let ck = pipeline::checkpoint_path(&run, 5);
    let out = tmp.path().join("render");
    ok(&["render", "-c", s(&cfg), "--checkpoint", s(&ck), "-d", s(&data), "--views", "0,7", "-o", s(&out)]);
    let names: Vec<_> = fs::read_dir(out.join("renders")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 2);

    let obj = tmp.path().join("sphere.obj");
    let gt = pipeline::ground_truth_mesh(&dataset::read_manifest(&data).unwrap().scene(), 64).unwrap();
    reneus::obj::write(&gt, &obj).unwrap();
    let eval = tmp.path().join("eval");
    let text = ok(&["eval", "--mesh", s(&obj), "-d", s(&data), "-o", s(&eval)]);
    assert!(text.starts_with("score_x100 = "));
    let score: f64 = text.lines().next().unwrap()[13..].parse().unwrap();
    assert!(score < 0.5, "{score}");
    assert_eq!(fs::read_to_string(eval.join("chamfer.txt")).unwrap(), text);
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let data = forge(tmp.path());
    let cfg = config("sphere_in_box.toml");
    let run = |threads: &str| {
        let out = tmp.path().join(format!("t{threads}"));
        let th = format!("threads={threads}");
        let mut args = vec!["train", "-c", s(&cfg), "-d", s(&data), "-o", s(&out), "-s", &th];
        args.extend_from_slice(QUICK);
        args.extend_from_slice(&["-s", "train.iterations=10"]);
        ok(&args);
        fs::read(pipeline::checkpoint_path(&out, 10)).unwrap()
    };
    assert!(run("1") == run("3"));
}
