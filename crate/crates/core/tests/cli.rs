use std::fs;
use std::path::Path;
use std::process::Command;

use twisted_reeb::cli::{read_records, Payload};

const BIN: &str = env!("CARGO_BIN_EXE_twisted-reeb");

const SPHERE: &str = r#"
experiment_id = "sphere"
seed = 11

[system]
kind = "star-shaped"
radius = 1.0
order = 2

[task]
kind = "orbit-search"
twist = 1
period_bracket = [1.0, 2.0]
seeds = { kind = "quasi-random", count = 6 }
floquet = true
"#;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], env_out: Option<&Path>) -> (i32, String) {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    match env_out {
        Some(p) => cmd.env("TWISTED_REEB_OUT", p),
        None => cmd.env_remove("TWISTED_REEB_OUT"),
    };
    let out = cmd.output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &SPHERE.replace("period_bracket", "perido"));
    let (code, err) = run(&["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(code, 2);
    assert!(err.contains("perido"), "{err}");
    assert!(!dir.path().join("sphere.jsonl").exists());
}

#[test]
fn reruns_are_deterministic_and_records_reverify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sphere.toml", SPHERE);
    let out = dir.path().join("out");
    for _ in 0..2 {
        let (code, err) = run(&["run", cfg.to_str().unwrap(), "--jobs", "2"], Some(&out));
        assert_eq!(code, 0, "{err}");
    }
    let records = read_records(&out.join("sphere.jsonl")).unwrap();
    assert_eq!(records.len() % 2, 0);
    let half = records.len() / 2;
    assert!(half >= 1);
    for (a, b) in records[..half].iter().zip(&records[half..]) {
        assert_eq!(a.payload, b.payload);
        assert_eq!(a.config_hash, b.config_hash);
        assert_eq!(a.schema_version, 1);
    }
    for r in &records {
        let Payload::Orbit { system, orbit, .. } = &r.payload else { panic!("unexpected {:?}", r.payload.kind()) };
        let sys = system.build().unwrap();
        orbit.verify(&sys, 1e-8, &twisted_reeb::flow::FlowOptions::default()).unwrap();
        assert!((orbit.tau - std::f64::consts::FRAC_PI_2).abs() < 1e-8);
        assert!(orbit.floquet.is_some());
    }
}

#[test]
fn seed_override_changes_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sphere.toml", SPHERE);
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(&["run", cfg.to_str().unwrap(), "--out", out], None).0, 0);
    assert_eq!(run(&["run", cfg.to_str().unwrap(), "--out", out, "--seed", "12"], None).0, 0);
    let records = read_records(&dir.path().join("sphere.jsonl")).unwrap();
    assert_ne!(records.first().unwrap().config_hash, records.last().unwrap().config_hash);
}

#[test]
fn empty_search_is_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "empty.toml", &SPHERE.replace("[1.0, 2.0]", "[0.2, 0.4]"));
    let (code, _) = run(&["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(code, 4);
    let records = read_records(&dir.path().join("sphere.jsonl")).unwrap();
    assert!(matches!(records[0].payload, Payload::Inconclusive { .. }));
}

#[test]
fn export_trace_and_floquet() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sphere.toml", SPHERE);
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(&["run", cfg.to_str().unwrap(), "--out", out], None).0, 0);
    let result = dir.path().join("sphere.jsonl");
    let csv_dir = dir.path().join("csv");
    let status = Command::new(BIN)
        .args(["export", result.to_str().unwrap(), "--kind", "trace", "--samples", "33", "--out", csv_dir.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let first = fs::read_dir(&csv_dir).unwrap().next().unwrap().unwrap().path();
    let text = fs::read_to_string(first).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,x1,x2,y1,y2");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 33);
    for r in &rows {
        let rr: f64 = r[1..].iter().map(|v| v * v).sum();
        assert!((rr - 1.0).abs() < 1e-8);
    }

    let status = Command::new(BIN)
        .args(["export", result.to_str().unwrap(), "--kind", "floquet", "--out", csv_dir.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());

    // An orbit record has no continuation data.
    let code = Command::new(BIN)
        .args(["export", result.to_str().unwrap(), "--kind", "continuation", "--out", csv_dir.to_str().unwrap()])
        .status()
        .unwrap()
        .code();
    assert_eq!(code, Some(2));
}
