//! End-to-end checks of the experiment executive and the `ballbot` binary.

use ballbot_core::harness::{run_track, ExperimentConfig, RunStatus, RunSummary};
use ballbot_core::plant::LinearParams;
use std::process::Command;

fn ballbot() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ballbot"))
}

fn read_summary(path: &std::path::Path) -> RunSummary {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn bad_config_key_exits_two_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"mpc": {"horizon": 40, "weight_typo": 1.0}}"#).unwrap();
    let out = dir.path().join("out");
    let res = ballbot().args(["track", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("mpc") && stderr.contains("weight_typo"), "{stderr}");
    let s = read_summary(&out.join("track_summary.json"));
    assert_eq!(s.status, RunStatus::ConfigError);
}

#[test]
fn invalid_value_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"run": {"latency_mpc_periods": 3}}"#).unwrap();
    let res = ballbot().args(["balance", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn short_balance_run_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let res = ballbot().args(["balance", "--duration", "1", "--seed", "4", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = std::fs::read_to_string(dir.path().join("balance_telemetry.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("t_s,x_cm,theta_x_deg,"));
    assert_eq!(lines.count(), 200);
    let s = read_summary(&dir.path().join("balance_summary.json"));
    assert_eq!(s.seed, 4);
    assert_eq!(s.config_hash.len(), 64);
}

#[test]
fn open_loop_run_aborts_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("open.json");
    std::fs::write(&cfg, r#"{"gains": {"k_theta": 0, "k_ydot": 0, "k_thetadot": 0, "pid": {"kp": 0, "ki": 0, "kd": 0}}}"#).unwrap();
    let res = ballbot().args(["balance", "--noise", "off", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(res.status.code(), Some(1));
    let s = read_summary(&dir.path().join("balance_summary.json"));
    assert_eq!(s.status, RunStatus::Aborted);
    assert!(s.abort.unwrap().time_s > 0.0);
}

#[test]
fn x_plane_ignores_the_y_reference() {
    let mut cfg = ExperimentConfig::default();
    cfg.plant.linear = LinearParams::published(10.9);
    cfg.run.duration = Some(3.0);
    let model = cfg.truth_model().unwrap();
    let moving = run_track(&cfg, &model).unwrap();
    cfg.reference.amplitude = 0.0;
    let still = run_track(&cfg, &model).unwrap();
    assert_eq!(moving.telemetry.len(), still.telemetry.len());
    for (a, b) in moving.telemetry.iter().zip(&still.telemetry) {
        assert_eq!(a.planes[0], b.planes[0]);
    }
    assert!(moving.telemetry.iter().zip(&still.telemetry).any(|(a, b)| a.planes[1] != b.planes[1]));
}

#[test]
fn nonlinear_plant_runs_the_lqr_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let res = ballbot().args(["lqr", "--plant", "nonlinear", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let s = read_summary(&dir.path().join("lqr_summary.json"));
    assert!(s.metrics.settling_time_s.unwrap() < 10.0);
}
