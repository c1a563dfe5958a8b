use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn scattermap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scattermap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = scattermap(&["run", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_preset_and_stage_are_usage_errors() {
    assert_eq!(scattermap(&["run", "--preset", "office"]).status.code(), Some(2));
    assert_eq!(scattermap(&["run", "--stage-through", "plot"]).status.code(), Some(2));
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let out = scattermap(&["run", "--config", "/no/such/config.json", "--out", "/tmp/unused"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_run_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = scattermap(&[
            "run",
            "--preset",
            "corridor-desk",
            "--seed",
            "7",
            "--out",
            arg(dir.path()),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("GOSPA smoother"));
    }
    for name in [
        "observations.rfobs",
        "detections.csv",
        "tracks.csv",
        "map.csv",
        "gospa.csv",
    ] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["status"], "complete");
}

#[test]
fn subcommands_chain_through_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = arg(dir.path());
    for cmd in ["simulate", "chart", "track", "evaluate"] {
        let o = scattermap(&[cmd, "--preset", "corridor-desk", "--out", out]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(dir.path().join("gospa.csv").is_file());
    assert!(dir.path().join("charts/chart_0000.csv").is_file());
    assert!(dir.path().join("charts/chart_0000.csv.json").is_file());
}

#[test]
fn stage_failure_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = scattermap(&["track", "--preset", "corridor-desk", "--out", arg(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `track` failed"));
}

#[test]
fn config_file_and_stage_through() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scattermap::pipeline::ScenarioConfig::preset("corridor-rt").unwrap();
    let path = dir.path().join("rt.json");
    fs::write(&path, cfg.to_json().unwrap()).unwrap();
    let out_dir = dir.path().join("out");
    let o = scattermap(&[
        "run",
        "--config",
        arg(&path),
        "--out",
        arg(&out_dir),
        "--stage-through",
        "chart",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out_dir.join("detections.csv").is_file());
    assert!(!out_dir.join("map.csv").exists());
}
