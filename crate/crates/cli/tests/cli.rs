use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use camtraj::benchmark::benchmark_spec;
use camtraj::scene::load_scene;

fn camtraj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_camtraj")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = camtraj(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Benchmark scene, its queries and filter config, grounded.
struct Fixture {
    dir: tempfile::TempDir,
    raw: PathBuf,
    grounded: PathBuf,
    queries: PathBuf,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.scene");
    let grounded = dir.path().join("grounded.scene");
    let queries = dir.path().join("queries.txt");
    let config = dir.path().join("run.cfg");
    ok(&["synth", "--benchmark", "--seed", "4", "--out", s(&raw), "--queries-out", s(&queries), "--config-out", s(&config)]);
    ok(&["ground", "--scene", s(&raw), "--queries", s(&queries), "--out", s(&grounded), "--config", s(&config)]);
    Fixture { dir, raw, grounded, queries, config }
}

/// The fixture's filter settings plus a small optimization budget.
fn quick_config(f: &Fixture, extra: &str) -> PathBuf {
    let mut text = std::fs::read_to_string(&f.config).unwrap();
    text.push_str("iterations = 3\nsamples_per_interval = 1\nrender_width = 32\nrender_height = 32\n");
    text.push_str(extra);
    let p = f.dir.path().join(format!("quick{}.cfg", text.len()));
    std::fs::write(&p, text).unwrap();
    p
}

fn files_with(dir: &Path, suffix: &str) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(suffix))
        .collect();
    v.sort();
    v
}

#[test]
fn synth_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.scene");
    let b = dir.path().join("b.scene");
    ok(&["synth", "--benchmark", "--seed", "9", "--out", s(&a)]);
    ok(&["synth", "--benchmark", "--seed", "9", "--out", s(&b), "--binary"]);
    let c = dir.path().join("c.scene");
    ok(&["synth", "--benchmark", "--seed", "9", "--out", s(&c)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    // binary and text carry the same cloud
    assert_eq!(load_scene(&a).unwrap(), load_scene(&b).unwrap());
}

#[test]
fn synth_reads_toml_specs_and_rejects_bad_ones() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(
        &spec,
        "clutter_count = 5\n[[objects]]\nlabel = \"cube\"\ncenter = [0.0, 0.0, 0.0]\nextent = [0.1, 0.1, 0.1]\n\
         gaussian_count = 12\nembedding = [1.0, 0.0, 0.0]\ncolor = [0.5, 0.5, 0.5]\n",
    )
    .unwrap();
    let out = dir.path().join("s.scene");
    ok(&["synth", "--spec", s(&spec), "--out", s(&out)]);
    let (cloud, _) = load_scene(&out).unwrap();
    assert_eq!((cloud.len(), cloud.embedding_dim()), (17, 3));

    std::fs::write(&spec, "objects = 3\n").unwrap();
    let bad = camtraj(&["synth", "--spec", s(&spec), "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("invalid scene spec"));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(camtraj(&["optimize"]).status.code(), Some(1));
    assert_eq!(camtraj(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(camtraj(&["synth", "--out", "x"]).status.code(), Some(1));
    assert_eq!(camtraj(&["--help"]).status.code(), Some(0));
}

#[test]
fn ground_flags_each_object_and_is_idempotent() {
    let f = fixture();
    let (cloud, _) = load_scene(&f.grounded).unwrap();
    let membership = benchmark_spec().membership();
    for i in 0..3 {
        let truth: Vec<bool> = membership.iter().map(|m| *m == Some(i)).collect();
        assert_eq!(cloud.channel_flags(i).unwrap(), truth, "prompt {i}");
    }
    let again = f.dir.path().join("again.scene");
    let summary = ok(&["ground", "--scene", s(&f.grounded), "--queries", s(&f.queries), "--out", s(&again), "--config", s(&f.config)]);
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(&f.grounded).unwrap());
    assert!(summary.contains("mug") && summary.contains("250"), "{summary}");
}

#[test]
fn query_matching_nothing_is_reported() {
    let f = fixture();
    let cfg = f.dir.path().join("strict.cfg");
    std::fs::write(&cfg, "dbscan_min_pts = 100000\n").unwrap();
    let out = camtraj(&["ground", "--scene", s(&f.raw), "--queries", s(&f.queries), "--out", s(&f.dir.path().join("x")), "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("query grounded to nothing"));
}

#[test]
fn trajectory_mode_writes_document_trace_and_keyframes() {
    let f = fixture();
    let cfg = quick_config(&f, "prompts = plant, mug, book\n");
    let out = f.dir.path().join("traj");
    ok(&["optimize", "--mode", "trajectory", "--scene", s(&f.grounded), "--queries", s(&f.queries), "--out", s(&out), "--config", s(&cfg)]);
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("iteration,tce,tre,upright,prior,alpha,total"));
    assert_eq!(lines.count(), 3);
    assert!(std::fs::read_to_string(out.join("trajectory.txt")).unwrap().starts_with("SPLATTRAJ v1 basis=rbf size=12"));
    assert_eq!(files_with(&out, ".pgm").len(), 9);
    assert_eq!(files_with(&out, ".ppm").len(), 9);
    assert_eq!(files_with(&out, ".pgm")[0], "frame_000_0.0556.pgm");

    // the evaluation report covers both methods and every metric block
    let poly_cfg = quick_config(&f, "prompts = plant, mug, book\nbasis = polynomial\n");
    let poly = f.dir.path().join("poly");
    ok(&["optimize", "--scene", s(&f.grounded), "--queries", s(&f.queries), "--out", s(&poly), "--config", s(&poly_cfg)]);
    let report = f.dir.path().join("report");
    let table = ok(&[
        "eval", "--scene", s(&f.grounded), "--queries", s(&f.queries), "--config", s(&cfg), "--out", s(&report),
        "--trajectory", s(&out.join("trajectory.txt")), "--trajectory", s(&poly.join("trajectory.txt")),
    ]);
    assert!(table.contains("rbf") && table.contains("polynomial") && table.contains('*'), "{table}");
    let csv = std::fs::read_to_string(report.join("report.csv")).unwrap();
    assert!(csv.starts_with("method,prompt,tce,tre,iou,ldj_angular,ldj_positional,keyframes\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
}

#[test]
fn pose_and_sgld_modes_write_pose_documents() {
    let f = fixture();
    let cfg = quick_config(&f, "prompt = book\nsgld_batch = 3\n");
    let pose_dir = f.dir.path().join("pose");
    ok(&["optimize", "--mode", "pose", "--scene", s(&f.grounded), "--queries", s(&f.queries), "--out", s(&pose_dir), "--config", s(&cfg)]);
    let doc = std::fs::read_to_string(pose_dir.join("pose.txt")).unwrap();
    assert!(doc.starts_with("SPLATPOSE v1 prompt=1 poses=1\n"), "{doc}");
    assert_eq!(std::fs::read_to_string(pose_dir.join("trace.csv")).unwrap().lines().count(), 4);

    let sgld_dir = f.dir.path().join("sgld");
    ok(&["optimize", "--mode", "sgld", "--seed", "2", "--scene", s(&f.grounded), "--queries", s(&f.queries), "--out", s(&sgld_dir), "--config", s(&cfg)]);
    let doc = std::fs::read_to_string(sgld_dir.join("poses.txt")).unwrap();
    assert!(doc.starts_with("SPLATPOSE v1 prompt=1 poses=3\n"));
    assert_eq!(files_with(&sgld_dir, ".csv"), ["trace_000.csv", "trace_001.csv", "trace_002.csv"]);

    // rendering the pose document reproduces the optimizer's frames
    let frames = f.dir.path().join("frames");
    ok(&["render", "--scene", s(&f.grounded), "--pose", s(&sgld_dir.join("poses.txt")), "--out", s(&frames), "--config", s(&cfg)]);
    for name in files_with(&sgld_dir, ".pgm") {
        assert_eq!(std::fs::read(frames.join(&name)).unwrap(), std::fs::read(sgld_dir.join(&name)).unwrap(), "{name}");
    }
}

#[test]
fn eval_on_ungrounded_scene_names_the_prompt() {
    let f = fixture();
    let cfg = quick_config(&f, "");
    let out = f.dir.path().join("t");
    ok(&["optimize", "--scene", s(&f.grounded), "--out", s(&out), "--config", s(&cfg)]);
    let res = camtraj(&["eval", "--scene", s(&f.raw), "--trajectory", s(&out.join("trajectory.txt")), "--out", s(&f.dir.path().join("r"))]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("prompt 0"), "{err}");
}

#[test]
fn invalid_config_is_a_validation_error() {
    let f = fixture();
    let cfg = f.dir.path().join("bad.cfg");
    std::fs::write(&cfg, "iterations = -3\n").unwrap();
    let res = camtraj(&["optimize", "--scene", s(&f.grounded), "--out", s(&f.dir.path().join("o")), "--config", s(&cfg)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 1"));
}
