use std::path::Path;
use std::process::{Command, Output};

use attnsphere::equiangular::{threshold_crossing_time, EquiangularState};
use attnsphere::Model;

fn run(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attnsphere"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn summary(text: &str) -> serde_json::Value {
    let line = text
        .lines()
        .find_map(|l| l.strip_prefix("# summary: "))
        .expect("summary line");
    serde_json::from_str(line).unwrap()
}

#[test]
fn longcontext_prints_correlation_and_branch() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["longcontext", "--rho", "0.5", "--gamma", "2", "--n", "100000000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let row = out.lines().find(|l| l.ends_with(",critical")).expect("critical row");
    let corr: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
    assert!((corr - 0.8).abs() < 0.02, "{corr}");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn equiangular_crossing_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["equiangular", "--n", "8", "--rho0", "0.2", "--beta", "1", "--tau", "0.99", "--t-final", "10", "--t-points", "5"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let s = summary(&stdout(&o));
    let state = EquiangularState::new(0.2, 8, 1.0, Model::Sa).unwrap();
    let expected = threshold_crossing_time(&state, 0.99).unwrap();
    assert_eq!(s["crossing_time"].as_f64().unwrap(), expected);
}

#[test]
fn output_flag_writes_csv_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eq.csv");
    let o = run(
        dir.path(),
        &["equiangular", "--n", "4", "--rho0", "0", "--beta", "1", "--t-final", "2", "--output", path.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# config_digest: "));
    assert!(text.lines().any(|l| l == "t,rho,gap"));
}

#[test]
fn missing_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["sweep", "--config", "nowhere.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.toml"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[equiangular]\nn = 4\nrho0 = 0.1\nbeta = 1.0\nfoo = 1\n").unwrap();
    let o = run(dir.path(), &["equiangular", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("foo"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["equiangular", "--bogus", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stiffness_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &[
            "simulate", "--n", "4", "--d", "4", "--beta", "1", "--horizon", "1", "--dt", "0.1",
            "--max-rotation-per-step", "1e-12", "--output", "s.csv",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("stiff"), "{}", stderr(&o));
}

#[test]
fn help_lists_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["sweep", "--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for key in ["integrator.dt", "record_every", "--seed", "--jobs"] {
        assert!(text.contains(key), "missing {key}");
    }
}

#[test]
fn seeded_simulation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec!["simulate", "--n", "6", "--d", "3", "--beta", "2", "--horizon", "2", "--seed", "11", "--output", out]
    };
    for out in ["a.csv", "b.csv"] {
        let o = run(dir.path(), &args(out));
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
    let o = run(dir.path(), &["simulate", "--n", "6", "--d", "3", "--beta", "2", "--horizon", "2", "--seed", "12", "--output", "c.csv"]);
    assert!(o.status.success());
    assert_ne!(a, std::fs::read(dir.path().join("c.csv")).unwrap());
}
