use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use simplex_stdp::export::sha256_hex;
use tempfile::TempDir;

fn simplex_stdp(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simplex-stdp"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn landscape_grid_writes_a_valid_lattice() {
    let dir = TempDir::new().unwrap();
    let o = simplex_stdp(&["landscape-grid", "--set", "grid_step=0.05", "--assert"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("landscape.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,y,loss"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 21 * 22 / 2);
    let s = 3f64.sqrt();
    for r in &rows {
        let (x, y) = (r[0], r[1]);
        assert!(y >= -1e-12 && s * x - y >= -1e-12 && s * (1.0 - x) - y >= -1e-12);
        assert!(r[2] >= -1.0 / 12.0 - 1e-15);
    }
    let min = rows.iter().map(|r| r[2]).fold(f64::INFINITY, f64::min);
    assert!((min + 1.0 / 12.0).abs() < 1e-15);
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("[PASS] barycenter"));
}

#[test]
fn manifest_hashes_every_file() {
    let dir = TempDir::new().unwrap();
    let o = simplex_stdp(&["mirror-compare", "--seed", "5", "--set", "random_points=3"], dir.path());
    assert_eq!(code(&o), 0);
    let manifest = read_json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["scenario"], "mirror-compare");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["random_points"], 3);
    let files = manifest["files"].as_array().unwrap();
    assert!(files.iter().any(|f| f["path"] == "summary.txt"));
    for f in files {
        let bytes = std::fs::read(dir.path().join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), sha256_hex(&bytes));
        assert_eq!(f["bytes"].as_u64().unwrap(), bytes.len() as u64);
    }
}

#[test]
fn config_file_is_overridden_by_set_and_flags() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"seed": 3, "random_points": 2, "alphas": [0.01, 0.001]}"#).unwrap();
    let out = dir.path().join("out");
    let o = simplex_stdp(
        &["mirror-compare", "--config", config.to_str().unwrap(), "--set", "random_points=4", "--seed", "9"],
        &out,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["config"]["random_points"], 4);
    assert_eq!(manifest["config"]["alphas"], serde_json::json!([0.01, 0.001]));
}

#[test]
fn same_seed_same_bytes() {
    let dir = TempDir::new().unwrap();
    let args = ["fig2-ensemble", "--seed", "2", "--set", "iterations=100", "--set", "count=3"];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&simplex_stdp(&[&args[..], &["--threads", "1"]].concat(), &a)), 0);
    assert_eq!(code(&simplex_stdp(&[&args[..], &["--threads", "2"]].concat(), &b)), 0);
    for name in ["final_states.csv", "manifest.json", "trajectories/trajectory_002.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = dir.path().join("c");
    assert_eq!(code(&simplex_stdp(&["fig2-ensemble", "--seed", "3", "--set", "iterations=100", "--set", "count=3"], &c)), 0);
    assert_ne!(std::fs::read(a.join("final_states.csv")).unwrap(), std::fs::read(c.join("final_states.csv")).unwrap());
}

#[test]
fn unknown_scenario_exits_64() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&simplex_stdp(&["fig9"], dir.path())), 64);
}

#[test]
fn config_errors_exit_2_before_running() {
    let dir = TempDir::new().unwrap();
    for set in ["bogus=1", "noise.colour=1", "ensemble=many", "alpha=0.9", "p0=[0.5,0.6]"] {
        let out = dir.path().join(set.replace(['=', '[', ']', ',', '.'], "_"));
        let o = simplex_stdp(&["thm22-verify", "--set", set], &out);
        assert_eq!(code(&o), 2, "{set}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.join("manifest.json").exists(), "{set}");
    }
    let o = simplex_stdp(&["landscape-grid", "--set", "grid_step=0.3"], &dir.path().join("grid"));
    assert_eq!(code(&o), 2);
}

#[test]
fn precondition_violation_exits_3() {
    let dir = TempDir::new().unwrap();
    let o = simplex_stdp(&["alg2-verify", "--set", "delta=0.5", "--set", "count=1"], dir.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn failed_check_exits_4_only_with_assert() {
    let dir = TempDir::new().unwrap();
    let sets = ["--set", "random_points=2", "--set", "ratio_min=150", "--set", "ratio_max=200"];
    let plain = simplex_stdp(&[&["mirror-compare"][..], &sets].concat(), &dir.path().join("plain"));
    assert_eq!(code(&plain), 0);
    let strict = simplex_stdp(&[&["mirror-compare", "--assert"][..], &sets].concat(), &dir.path().join("strict"));
    assert_eq!(code(&strict), 4);
    assert!(String::from_utf8_lossy(&strict.stdout).contains("[FAIL] quadratic order"));
    assert!(dir.path().join("strict/manifest.json").exists());
}

#[test]
fn unwritable_output_exits_73() {
    let dir = TempDir::new().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "not a directory").unwrap();
    let o = simplex_stdp(&["landscape-grid", "--set", "grid_step=0.1"], &blocker.join("sub"));
    assert_eq!(code(&o), 73);
}
