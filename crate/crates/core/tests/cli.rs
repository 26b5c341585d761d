use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
    "scenario": {"frames_per_chunk": 2, "height": 8, "width": 8, "blob_start": [3, 2], "blob_velocity": [0.3, 0.6]},
    "schedule": {"total_steps": 10, "window": 2}
}"#;

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motioncache"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.json"), SMALL).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_inspect_and_export() {
    let dir = setup();
    let o = cli(&["run", "--config", "small.json", "--verbosity", "latents"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["runs"].as_array().unwrap().len(), 4);

    let trace = "out/traces/seed0_motioncache.mctr";
    assert!(dir.path().join(format!("{trace}.json")).exists());
    let o = cli(&["inspect", trace, "--limit", "3"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("\"config_hash\""));
    assert!(text.contains("step records"));

    let o = cli(&["export", "--config", "small.json", "--verbosity", "latents", "--trace", trace], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_dir(dir.path().join("out/frames")).unwrap().count() > 0);
}

#[test]
fn export_of_a_decisions_trace_is_a_state_error() {
    let dir = setup();
    assert_eq!(cli(&["run", "--config", "small.json", "--policy", "motioncache"], dir.path()).status.code(), Some(0));
    let o = cli(&["export", "--config", "small.json", "--trace", "out/traces/seed0_motioncache.mctr"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("verbosity"));
}

#[test]
fn sweep_writes_csv() {
    let dir = setup();
    let o = cli(&["sweep", "--config", "small.json", "--param", "alpha", "--values", "1,0.5", "--out", "sw"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("sw/sweep_alpha.csv")).unwrap();
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn verify_exit_codes() {
    let dir = setup();
    let o = cli(&["verify", "sparse-dense", "--config", "small.json"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).trim_end().ends_with("PASS"));

    // Without the conditioning drift the residual change is not motion-driven.
    let plain = r#"{"field": {"kind": "toy_attention", "guide": null, "mlp_gain": 0.3}, "seeds": [0, 1]}"#;
    std::fs::write(dir.path().join("plain.json"), plain).unwrap();
    let o = cli(&["verify", "ndcg", "--config", "plain.json"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    assert!(stdout(&o).trim_end().ends_with("FAIL"));
}

#[test]
fn bad_input_exit_codes() {
    let dir = setup();
    std::fs::write(dir.path().join("bad.json"), r#"{"policies": [{"kind": "motioncache", "alpha": -1}]}"#).unwrap();
    let o = cli(&["run", "--config", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("policies[0].alpha"));

    assert_eq!(cli(&["run", "--config", "missing.json"], dir.path()).status.code(), Some(4));
    assert_eq!(cli(&["run", "--config", "small.json", "--policy", "teacache"], dir.path()).status.code(), Some(2));
    assert_eq!(cli(&["inspect", "nothing.mctr"], dir.path()).status.code(), Some(4));
    assert_eq!(cli(&["sweep", "--param", "gamma", "--values", "1"], dir.path()).status.code(), Some(2));
}
