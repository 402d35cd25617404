use std::path::Path;
use std::process::{Command, Output};

fn acrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acrl")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const GOOD: &str = r#"{"name": "cli", "mode": "acrl", "episodes": 5,
  "env": {"kind": "seq", "horizon": 6},
  "agent": {"batch_size": 4, "epsilon": {"decay_episodes": 5}},
  "reward_model": {"initial_size": 12, "committee": {"train": {"epochs": 2, "batch_size": 8, "lr": 0.003}},
                   "acquisition": {"budget": 2, "window": 20, "every": 2}}}"#;

#[test]
fn validate_accepts_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "good.json", GOOD);
    assert_eq!(acrl(&["validate", "--config", &good]).status.code(), Some(0));

    let bad = write(dir.path(), "bad.json", &GOOD.replace("\"batch_size\": 4", "\"batch_size\": 4, \"gama\": 1"));
    let out = acrl(&["validate", "--config", &bad]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("agent.gama"));

    let missing = dir.path().join("absent.json");
    assert_eq!(acrl(&["validate", "--config", missing.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "run.json", GOOD);
    let run_dir = dir.path().join("out");
    let out = acrl(&["run", "--config", &config, "--seed", "3", "--out", run_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("metrics.csv").exists());
    let saved = std::fs::read_to_string(run_dir.join("config.json")).unwrap();
    assert!(saved.contains("\"run\": 3"));

    let report = dir.path().join("report.csv");
    let out = acrl(&["report", "--inputs", run_dir.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(report).unwrap().lines().count(), 3);

    let junk = write(dir.path(), "junk.csv", "a,b\n1,2\n");
    let out = acrl(&["report", "--inputs", &junk, "--out", dir.path().join("r2.csv").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn divergence_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "diverge.json",
        r#"{"mode": "oracle", "episodes": 30, "env": {"kind": "seq", "horizon": 12},
            "agent": {"batch_size": 8, "lr": 1e300}}"#,
    );
    let out = acrl(&["run", "--config", &config, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
