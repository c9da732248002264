use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn orbitscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orbitscan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("mission.toml");
    fs::write(&path, extra).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_default_mission() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "seed = 11\n");
    let out = dir.path().join("out");
    let result = orbitscan(&[
        "simulate",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    for file in [
        "report.json",
        "events.log",
        "dense.ply",
        "sparse.ply",
        "captures.json",
    ] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["final_state"], "Done");
    assert_eq!(report["seed"], 11);

    // the bundle written by simulate feeds the reconstruct subcommand
    let ply = dir.path().join("again.ply");
    let quality = dir.path().join("quality.json");
    let result = orbitscan(&[
        "reconstruct",
        "--captures",
        out.join("captures.json").to_str().unwrap(),
        "--out",
        ply.to_str().unwrap(),
        "--report",
        quality.to_str().unwrap(),
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    assert_eq!(
        fs::read(&ply).unwrap(),
        fs::read(out.join("dense.ply")).unwrap()
    );
    let q: serde_json::Value = serde_json::from_str(&fs::read_to_string(quality).unwrap()).unwrap();
    assert_eq!(q["quality"]["completeness"], 1.0);

    // sparse.ply round-trips through detect
    let result = orbitscan(&[
        "detect",
        "--input",
        out.join("sparse.ply").to_str().unwrap(),
        "--pose",
        "0,0,1,0",
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let d: serde_json::Value = serde_json::from_slice(&result.stdout).unwrap();
    let target: Vec<f64> = serde_json::from_value(d["target"].clone()).unwrap();
    assert!((target[1] - 3.0).abs() < 0.2, "{target:?}");
}

#[test]
fn aborted_mission_exits_nonzero_with_reason() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[scene]\nobjects = []\n");
    let out = dir.path().join("out");
    let result = orbitscan(&[
        "simulate",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!result.status.success());
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("NoTarget"), "{stderr}");
    assert!(out.join("report.json").exists());
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "dt = -1.0\n");
    let result = orbitscan(&[
        "simulate",
        "--config",
        &config,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!result.status.success());
    assert!(!result.stderr.is_empty());
}

#[test]
fn plan_prints_waypoints() {
    let result = orbitscan(&[
        "plan",
        "--target",
        "0,3,1",
        "--pose",
        "0,0,1,0",
        "--n",
        "6",
        "--direction",
        "cw",
    ]);
    assert!(result.status.success());
    let plan: serde_json::Value = serde_json::from_slice(&result.stdout).unwrap();
    assert_eq!(plan["waypoints"].as_array().unwrap().len(), 6);
    assert_eq!(plan["radius"], 3.0);
    assert_eq!(plan["direction"], "clockwise");

    let degenerate = orbitscan(&["plan", "--target", "0,0,1", "--pose", "0,0,1,0"]);
    assert!(!degenerate.status.success());
}

#[test]
fn detect_labels_every_vertex() {
    let dir = tempfile::tempdir().unwrap();
    let ply = dir.path().join("cloud.ply");
    let mut text = String::from(
        "ply\nformat ascii 1.0\nelement vertex 40\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
    );
    for i in 0..30 {
        text += &format!("{} 2 {}\n", 0.01 * i as f64, 1.0 + 0.01 * i as f64);
    }
    for i in 0..10 {
        text += &format!("{} 9 1\n", 3.0 * i as f64 - 15.0);
    }
    fs::write(&ply, text).unwrap();
    let result = orbitscan(&[
        "detect",
        "--input",
        ply.to_str().unwrap(),
        "--pose",
        "0,0,1,0",
        "--keep-fraction",
        "1.0",
        "--min-points",
        "5",
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let d: serde_json::Value = serde_json::from_slice(&result.stdout).unwrap();
    let labels: Vec<i64> = serde_json::from_value(d["labels"].clone()).unwrap();
    assert_eq!(labels.len(), 40);
    assert!(labels[..30].iter().all(|&l| l == 0));
    assert!(labels[30..].iter().all(|&l| l == -1));
}
