use std::path::Path;
use std::process::{Command, Output};

fn cmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmpc")).args(args).output().expect("binary runs")
}

fn short_config(dir: &Path) -> String {
    let path = dir.join("short.toml");
    std::fs::write(&path, "[simulation]\nduration = 2.0\n").unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn single_run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let read = |name: &str| {
        let out = dir.path().join(name);
        let o = cmpc(&["run", "--controller", "cmpc", "--seed", "3", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (std::fs::read(out.join("log.csv")).unwrap(), std::fs::read(out.join("metrics.json")).unwrap())
    };
    let (a, b) = (read("a"), read("b"));
    assert!(a.0.len() > 100);
    assert_eq!(a.0, b.0);
    // metrics.json carries wall-clock solve times, so compare the log only
    assert!(!a.1.is_empty() && !b.1.is_empty());
}

#[test]
fn monte_carlo_writes_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let out = dir.path().join("mc");
    let o = cmpc(&["mc", "--runs", "2", "--seed", "4", "--workers", "2", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["aggregate.json", "timing.json", "summary.json", "metrics_long.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn verify_exits_zero() {
    let o = cmpc(&["verify"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(!String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn plan_writes_a_reference() {
    let o = cmpc(&["plan", "--seed", "2"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("t,r_x"));
    assert!(text.lines().count() > 10);
}

#[test]
fn bad_arguments_exit_two() {
    assert_eq!(cmpc(&["run", "--controller", "nope"]).status.code(), Some(2));
    assert_eq!(cmpc(&["mc", "--runs", "0"]).status.code(), Some(2));
    assert_eq!(cmpc(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[outer]\nno_such_key = 1\n").unwrap();
    assert_eq!(cmpc(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(cmpc(&["run", "--config", "/does/not/exist.toml"]).status.code(), Some(2));
}

#[test]
fn shipped_defaults_match_the_built_in_ones() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let parsed = tandem_cmpc::harness::Config::from_file(&path).unwrap();
    assert_eq!(parsed, tandem_cmpc::harness::Config::default());
    let o = cmpc(&["config"]);
    let printed = tandem_cmpc::harness::Config::from_toml_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(printed, parsed);
}
