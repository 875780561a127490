use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mvmv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvmv")).args(args).env_remove("MVMV_WORKERS").output().unwrap()
}

fn preset_file(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(name).display().to_string()
}

#[test]
fn validate_shipped_linear_preset() {
    let dir = tempfile::tempdir().unwrap();
    let out = mvmv(&["validate", "-c", &preset_file("linear.json"), "-o", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["checks"].as_array().unwrap().len(), 16);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("validate.json")).unwrap()).unwrap();
    assert_eq!(summary["schema_version"], 1);
}

#[test]
fn every_shipped_preset_file_validates() {
    let dir = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("presets")).unwrap() {
        let path = entry.unwrap().path();
        let out = mvmv(&["validate", "-c", path.to_str().unwrap(), "-o", dir.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", path.display());
    }
}

#[test]
fn brownian_rate_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = mvmv(&["rate", "-c", &preset_file("brownian.json"), "-o", dir.path().to_str().unwrap(), "--target", "1.0"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("rate.csv")).unwrap();
    let value: f64 = csv.lines().nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!((value - 0.5).abs() <= 1e-3, "{value}");
    let control = fs::read_to_string(dir.path().join("rate_control.csv")).unwrap();
    assert_eq!(control.lines().next(), Some("t,h_1"));
}

#[test]
fn clt_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"preset": "clt-quadratic", "T": 1, "steps": 100, "replicas": 30, "particles": 100}"#).unwrap();
    let run = |name: &str| {
        let o = dir.path().join(name);
        let out = mvmv(&["clt", "-c", cfg.to_str().unwrap(), "-o", o.to_str().unwrap(), "--seed", "42"]);
        assert!(matches!(out.status.code(), Some(0) | Some(1)));
        (fs::read(o.join("clt-p1.csv")).unwrap(), fs::read(o.join("clt-p2.csv")).unwrap(), fs::read(o.join("clt.json")).unwrap())
    };
    assert_eq!(run("a"), run("b"));
    let csv = String::from_utf8(run("c").0).unwrap();
    assert_eq!(csv.lines().next(), Some("epsilon,estimate,stderr,censored"));
    assert!(csv.lines().last().unwrap().starts_with("fit,"));
}

#[test]
fn seed_changes_the_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"preset": "linear-reflected", "T": 1, "steps": 50, "particles": 20, "epsilon": 0.1}"#).unwrap();
    let run = |seed: &str| {
        let o = dir.path().join(seed);
        assert_eq!(mvmv(&["simulate", "-c", cfg.to_str().unwrap(), "-o", o.to_str().unwrap(), "--seed", seed]).status.code(), Some(0));
        fs::read(o.join("ensemble.csv")).unwrap()
    };
    assert_ne!(run("1"), run("2"));
}

#[test]
fn workers_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"preset": "linear-reflected", "T": 1, "steps": 50, "particles": 300, "epsilon": 0.1}"#).unwrap();
    let mut outs = Vec::new();
    for w in ["1", "4"] {
        let o = dir.path().join(w);
        let status = Command::new(env!("CARGO_BIN_EXE_mvmv"))
            .args(["simulate", "-c", cfg.to_str().unwrap(), "-o", o.to_str().unwrap()])
            .env("MVMV_WORKERS", w)
            .status()
            .unwrap();
        assert!(status.success());
        outs.push(fs::read(o.join("ensemble.csv")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn errors_exit_two_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("out");
    let cases = [
        r#"{"preset": "linear-reflected", "T": 1, "epsilon_grid": [0.001, 0.01]}"#,
        r#"{"preset": "linear-reflected", "T": 1, "kappa": 0.5}"#,
        r#"{"preset": "no-such-thing", "T": 1}"#,
        r#"{"preset": "linear-reflected""#,
    ];
    let expect = ["epsilon grid must be strictly decreasing", "(0, 1/2)", "unknown preset", "line 1"];
    for (body, needle) in cases.iter().zip(expect) {
        let cfg = dir.path().join("cfg.json");
        fs::write(&cfg, body).unwrap();
        let out = mvmv(&["limit", "-c", cfg.to_str().unwrap(), "-o", o.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2));
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        assert!(err.contains(needle), "{err}");
    }
    let missing = mvmv(&["limit", "-c", dir.path().join("nope.json").to_str().unwrap(), "-o", o.to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn verdict_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    // Deterministic run: the event is never hit, so the tail report is censored.
    fs::write(
        &cfg,
        r#"{"preset": "linear-reflected", "params": {"sigma": 0.0}, "T": 1, "steps": 50, "replicas": 2, "particles": 5,
            "epsilons": [0.5, 0.1], "ldp": {"target": [3.0], "radius": 0.1}}"#,
    )
    .unwrap();
    let o = dir.path().join("out");
    let out = mvmv(&["ldp-tail", "-c", cfg.to_str().unwrap(), "-o", o.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(o.join("ldp-tail.csv").exists());
}

#[test]
fn writes_only_inside_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"preset": "tanh-smooth", "T": 1, "steps": 40, "particles": 10, "epsilon": 0.2}"#).unwrap();
    let o = dir.path().join("nested/out");
    assert_eq!(mvmv(&["simulate", "-c", cfg.to_str().unwrap(), "-o", o.to_str().unwrap()]).status.code(), Some(0));
    let mut top: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    top.sort();
    assert_eq!(top, ["cfg.json", "nested"]);
    let path = fs::read_to_string(o.join("particle_0.csv")).unwrap();
    assert_eq!(path.lines().next(), Some("t,X_1,K_1,varK"));
    assert_eq!(path.lines().count(), 42);
    let ens = fs::read_to_string(o.join("ensemble.csv")).unwrap();
    assert_eq!(ens.lines().next(), Some("t,mean,second_moment,sup_stat"));
}
