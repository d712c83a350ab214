use std::path::Path;
use std::process::Command;

use raftsim::harness::io::{read_series, read_snapshot};

const REDUCED: &str = r#"
[geometry]
kind = "circle"
n = 32

[params]
delta = 1.0
[params.potential]
theta0 = 3.0
[params.exchange]
kind = "reaction"
b1 = 1.0
b2 = 0.5

[stepper]
dt = 0.01

[initial]
kind = "random"
seed = 4
amplitude = 0.2
v = 0.3
u = 0.4

[schedule]
t_final = 0.2
sample_stride = 2
checkpoint_stride = 10
"#;

fn raftsim(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_raftsim"))
        .args(args)
        .env("RAFTSIM_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn run_writes_series_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), REDUCED);
    let out = dir.path().join("a");
    let o = raftsim(&["run-reduced", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let series = read_series(&out.join("series.csv")).unwrap();
    assert_eq!(series.len(), 11);
    assert!(out.join("checkpoints/step_0000000010.snap").exists());
    assert!(out.join("checkpoints/step_0000000020.snap").exists());
    let fin = read_snapshot(&out.join("final.snap")).unwrap();
    assert_eq!(fin.header.step, 20);
}

#[test]
fn resume_equals_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), REDUCED);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(raftsim(&["run-reduced", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    let ckpt = a.join("checkpoints/step_0000000010.snap");
    let o = raftsim(&[
        "run-reduced",
        "--config",
        &cfg,
        "--out",
        b.to_str().unwrap(),
        "--resume",
        ckpt.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(a.join("final.snap")).unwrap(),
        std::fs::read(b.join("final.snap")).unwrap()
    );
    let straight = read_series(&a.join("series.csv")).unwrap();
    let resumed = read_series(&b.join("series.csv")).unwrap();
    assert_eq!(&straight[straight.len() - resumed.len()..], &resumed[..]);
    assert_eq!(resumed.first().unwrap().t, straight[6].t);
}

#[test]
fn resume_with_different_dynamics_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), REDUCED);
    let a = dir.path().join("a");
    assert!(raftsim(&["run-reduced", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    let ckpt = a.join("checkpoints/step_0000000010.snap");
    let o = raftsim(&[
        "run-reduced",
        "--config",
        &cfg,
        "--out",
        dir.path().join("b").to_str().unwrap(),
        "--resume",
        ckpt.to_str().unwrap(),
        "--override",
        "params.delta=2.0",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hash"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &REDUCED.replace("delta = 1.0", "delta = -1.0"));
    let o = raftsim(&["run-reduced", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("params.delta") && err.contains("line 7"), "{err}");

    let cfg = write_config(dir.path(), REDUCED);
    let o = raftsim(&["run-full", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solver_failures_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), REDUCED);
    let out = dir.path().join("f");
    let o = raftsim(&[
        "run-reduced",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--override",
        "stepper.newton_tol=1e-300",
        "--override",
        "stepper.newton_max_iters=1",
        "--override",
        "stepper.dt_min=0.01",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("failure.snap").exists());
}

#[test]
fn sweep_reports_embed_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{REDUCED}\n[experiment]\nkappa_list = [1e-2, 1e-3]\n");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("k");
    let o = raftsim(&["sweep-kappa", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
    assert_eq!(report["config"]["params"]["delta"], 1.0);
    assert_eq!(report["rows"][0]["kappa"], 1e-2);
}
