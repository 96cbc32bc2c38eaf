use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const OVERLOADED: &str = "\
n_rt = 10
n_nrt = 10
lambda_rt = 1
lambda_nrt = 1
q = 0.3
p_avg = 2
horizon = 20000
";

const LIGHT: &str = "\
n_rt = 4
n_nrt = 4
lambda_rt = 0.1
lambda_nrt = 0.1
q = 0.3
p_avg = 10
horizon = 20000
sample_every = 5000
";

fn dlsched(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlsched"))
        .current_dir(dir)
        .args(args)
        .env_remove("DLSCHED_P_AVG")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dlsched(dir.path(), &["selftest"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn run_writes_report_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "light.kv", LIGHT);
    let out = dlsched(dir.path(), &["run", "--config", &cfg, "--out", "res", "--strict"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("res/report.json")).unwrap()).unwrap();
    assert_eq!(report["power_ok"], true);
    let csv = fs::read_to_string(dir.path().join("res/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
}

#[test]
fn run_prints_json_and_decision_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "light.kv", &LIGHT.replace("horizon = 20000", "horizon = 50"));
    let out = dlsched(dir.path(), &["run", "--config", &cfg, "--decisions", "d.csv", "--seed", "9"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["seed"], 9);
    let log = fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert_eq!(log.lines().count(), 51);
}

#[test]
fn strict_flags_constraint_violations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "hot.kv", OVERLOADED);
    assert_eq!(dlsched(dir.path(), &["run", "--config", &cfg]).status.code(), Some(0));
    let out = dlsched(dir.path(), &["run", "--config", &cfg, "--strict"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("qos_ok=false"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.kv", &LIGHT.replace("q = 0.3", "q = 1.5"));
    let out = dlsched(dir.path(), &["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("q"));
    assert_eq!(dlsched(dir.path(), &["run"]).status.code(), Some(2));
    assert_eq!(dlsched(dir.path(), &["run", "--config", "missing.kv"]).status.code(), Some(2));
    assert_eq!(dlsched(dir.path(), &["bogus"]).status.code(), Some(2));
}

#[test]
fn env_override_reaches_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "light.kv", &LIGHT.replace("horizon = 20000", "horizon = 100"));
    let out = Command::new(env!("CARGO_BIN_EXE_dlsched"))
        .current_dir(dir.path())
        .args(["run", "--config", &cfg])
        .env("DLSCHED_Q", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let spec = "\
base.n_rt = 4
base.n_nrt = 4
base.lambda_rt = 0.2
base.lambda_nrt = 0.2
base.q = 0.3
base.p_avg = 2
base.horizon = 2000
axis = p_avg
values = [2, 4, 6, 8, 10]
seeds = [1, 2]
schedulers = [onoff, fixedp]
";
    let cfg = write(dir.path(), "sweep.kv", spec);
    let out = dlsched(dir.path(), &["sweep", "--config", &cfg, "--out", "s.csv", "--jobs", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 5 * 2);
}

#[test]
fn region_traces_rays() {
    let dir = tempfile::tempdir().unwrap();
    let spec = "\
query.lambda_nrt = [0, 0]
query.p_avg = 5
query.states = [0.5, 2]
query.probs = [0.5, 0.5]
query.grid_levels = 16
rays = [[1, 0], [1, 1], [0, 1]]
";
    let cfg = write(dir.path(), "region.kv", spec);
    let out = dlsched(dir.path(), &["region", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("ray,scale,lp_scale,user,lambda"));
    assert_eq!(lines.count(), 3 * 2);
}
