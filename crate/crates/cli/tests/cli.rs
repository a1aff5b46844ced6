//! End-to-end runs of the `tcsl` binary on the bundled scenarios.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn tcsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcsl"))
        .args(args)
        .env_remove("TCSL_WORKERS")
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn run_into(cmd: &str, config: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = tcsl(&args);
    assert!(o.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_output_is_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_into("simulate", &scenario("packet.toml"), &a, &["--workers", "1"]);
    run_into("simulate", &scenario("packet.toml"), &b, &["--workers", "3"]);
    for file in ["trajectories.jsonl", "histogram_p0.csv", "snapshots/traj000005_00002.bin"] {
        let x = std::fs::read(a.join(file)).unwrap();
        let y = std::fs::read(b.join(file)).unwrap();
        assert!(x == y, "{file} differs between worker counts");
    }
    let first = std::fs::read_to_string(a.join("trajectories.jsonl")).unwrap();
    let meta: Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(meta["meta"]["seed"], 11);
}

#[test]
fn seed_override_changes_the_series() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_into("simulate", &scenario("packet.toml"), &a, &[]);
    run_into("simulate", &scenario("packet.toml"), &b, &["--seed", "12"]);
    let x = std::fs::read(a.join("trajectories.jsonl")).unwrap();
    let y = std::fs::read(b.join("trajectories.jsonl")).unwrap();
    assert_ne!(x, y);
}

#[test]
fn analyze_reproduces_the_ensemble_report() {
    let dir = tempfile::tempdir().unwrap();
    let (sim, ens) = (dir.path().join("sim"), dir.path().join("ens"));
    run_into("simulate", &scenario("two_level.toml"), &sim, &["--workers", "2"]);
    let o = tcsl(&["analyze", "--config", scenario("two_level.toml").to_str().unwrap(), "--out", sim.to_str().unwrap()]);
    assert!(o.status.success());
    run_into("ensemble", &scenario("two_level.toml"), &ens, &[]);
    let analysis = read_json(&sim.join("analysis.json"));
    let report = read_json(&ens.join("report.json"));
    assert_eq!(analysis, report);
    let born = &report["born"];
    assert_eq!(born["total"], 400);
    assert_eq!(born["uncollapsed"], 0);
    let f = born["frequencies"][0].as_f64().unwrap();
    let se = born["stderr"][0].as_f64().unwrap();
    assert!((f - 0.7).abs() < 3.0 * se, "{f}");
}

#[test]
fn master_config_and_examples() {
    let o = tcsl(&["master", "--config", scenario("master.toml").to_str().unwrap()]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["dimension"], 3);

    let dir = tempfile::tempdir().unwrap();
    let zero = dir.path().join("zero.toml");
    let text = std::fs::read_to_string(scenario("master.toml")).unwrap().replace("delta_s = 2.0", "delta_s = 0.0");
    std::fs::write(&zero, text).unwrap();
    let o = tcsl(&["master", "--config", zero.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let amps = [[0.6, 0.0], [0.0, 0.48], [0.64, 0.0]];
    for (i, row) in v["final_elements"].as_array().unwrap().iter().enumerate() {
        for (j, z) in row.as_array().unwrap().iter().enumerate() {
            // rho_ij = c_i conj(c_j)
            let (a, b) = (amps[i], amps[j]);
            let re = a[0] * b[0] + a[1] * b[1];
            let im = a[1] * b[0] - a[0] * b[1];
            assert!((z[0].as_f64().unwrap() - re).abs() < 1e-15 && (z[1].as_f64().unwrap() - im).abs() < 1e-15);
        }
    }

    let o = tcsl(&["master", "--example", "collapse", "L=0", "C=1", "R=3", "S=1", "lambda=1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let factor = v["example"]["predicted_factor"].as_f64().unwrap();
    // Squared separations 1 and 4.
    assert!((factor - (-4.5f64).exp()).abs() < 1e-15);

    let o = tcsl(&["master", "--example", "collapse", "L=0", "C=1", "R=2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("degenerate"));
}

#[test]
fn config_errors_name_the_line_and_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("two_level.toml")).unwrap().replace("trajectories = 400", "trajectories = 0");
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, &text).unwrap();
    let line = text.lines().position(|l| l.starts_with("trajectories")).unwrap() + 1;
    let o = tcsl(&["ensemble", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains(&format!("bad.toml:{line}:")), "{err}");

    std::fs::write(&bad, text.replace("[run]", "[run]\nbogus = 1")).unwrap();
    let o = tcsl(&["simulate", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}

#[test]
fn validate_lists_and_runs_single_checks() {
    let o = tcsl(&["validate", "--list"]);
    assert!(o.status.success());
    let listing = String::from_utf8_lossy(&o.stdout);
    assert_eq!(listing.lines().filter(|l| !l.starts_with("     ")).count(), 11);

    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("v.json");
    let o = tcsl(&["validate", "--only", "counting", "--json", json.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
    assert_eq!(read_json(&json)[0]["key"], "counting");

    assert_eq!(tcsl(&["validate", "--only", "nonsense"]).status.code(), Some(2));
}
