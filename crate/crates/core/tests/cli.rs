use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn reirl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reirl"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .env_remove("REIRL_CONFIG")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn error_record(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no record in {stderr}"));
    serde_json::from_str(line).unwrap()
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// 80 entities observed over 9 to 11 consecutive quarters with two
/// features, one of them occasionally missing.
fn write_panel(path: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut text = String::from("entity,period,size,momentum,action_raw\n");
    for e in 0..80 {
        let len = 9 + e % 3;
        let start = (e % 4) as i64;
        for t in 0..len {
            let size: f64 = rng.random_range(-2.0..2.0);
            let mom = if rng.random::<f64>() < 0.05 {
                String::new()
            } else {
                format!("{:.4}", rng.random_range(-1.0..1.0))
            };
            let action = if t + 1 == len {
                String::new()
            } else {
                format!("{:.5}", 0.02 * size + rng.random_range(-0.05..0.05))
            };
            text.push_str(&format!("f{e:03},{},{size:.4},{mom},{action}\n", start + t as i64));
        }
    }
    fs::write(path, text).unwrap();
}

#[test]
fn csv_panel_runs_through_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let csv = d.join("panel.csv");
    write_panel(&csv);
    let cfg = d.join("run.toml");
    fs::write(&cfg, "knn.k = 5\nreirl.max_iters = 3000\nhorizon.min = 8\nhorizon.max = 10\n").unwrap();
    let c = cfg.to_str().unwrap();

    ok(&reirl(d, &["--config", c, "ingest", "--input", csv.to_str().unwrap()]));
    ok(&reirl(d, &["--config", c, "discretize"]));
    let summary = read(&d.join("discretize_summary.json"));
    assert_eq!(summary["payload"]["written"], serde_json::json!([8, 9, 10]));
    ok(&reirl(d, &["--config", c, "policy"]));
    ok(&reirl(d, &["--config", c, "estimate"]));
    for h in [8, 9, 10] {
        let rec = read(&d.join(format!("theta_H{h}.json")));
        assert_eq!(rec["kind"], "theta");
        assert_eq!(rec["payload"]["horizon"], h);
        assert_eq!(rec["payload"]["feature_names"], serde_json::json!(["size", "momentum"]));
    }
    let t = reirl(d, &["--config", c, "ttest"]);
    ok(&t);
    assert!(String::from_utf8_lossy(&t.stdout).contains("size"));
    let report = read(&d.join("ttest.json"));
    assert_eq!(report["payload"]["horizons"], serde_json::json!([8, 9, 10]));
    assert!(!fs::read_to_string(d.join("ttest.txt")).unwrap().is_empty());

    let theta = d.join("theta_H9.json");
    ok(&reirl(d, &["--config", c, "regress", "--theta", theta.to_str().unwrap()]));
    let reg = read(&d.join("regression.json"));
    assert!(reg["payload"]["result"]["n"].as_u64().unwrap() > 500);

    // every artifact and manifest carries the same config hash
    let hash = read(&d.join("manifest-estimate.json"))["config_hash"].clone();
    for name in ["panel.json", "policy.json", "theta_H8.json", "ttest.json", "regression.json"] {
        assert_eq!(read(&d.join(name))["config_hash"], hash, "{name}");
    }
}

#[test]
fn missing_prerequisite_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = reirl(dir.path(), &["estimate"]);
    assert_eq!(out.status.code(), Some(3));
    let rec = error_record(&out);
    assert_eq!(rec["error"], "missing-prerequisite");
    assert!(rec["message"].as_str().unwrap().contains("policy"));

    let out = reirl(dir.path(), &["discretize"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_record(&out)["message"].as_str().unwrap().contains("ingest"));
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = reirl(dir.path(), &["--delta", "1.5", "oracle-check"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_record(&out)["message"].as_str().unwrap().contains("reirl.delta"));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "knn.neighbours = 3\n").unwrap();
    let out = reirl(dir.path(), &["--config", cfg.to_str().unwrap(), "oracle-check"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_record(&out)["message"].as_str().unwrap().contains("neighbours"));
}

#[test]
fn bundled_oracle_check_meets_tolerances() {
    let dir = tempfile::tempdir().unwrap();
    ok(&reirl(dir.path(), &["oracle-check"]));
    let rep = read(&dir.path().join("oracle_report.json"));
    let p = &rep["payload"];
    assert_eq!(p["tv_ok"], true);
    assert_eq!(p["duality_ok"], true);
    assert!(p["report"]["tv_to_exponential_form"].as_f64().unwrap() <= 1e-8);
    assert!(p["report"]["duality_gap"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn infeasible_oracle_spec_exits_with_code_five() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"mdp": {"n_states": 2, "n_actions": 2,
                     "transition": [[[0.8, 0.2], [0.3, 0.7]], [[0.6, 0.4], [0.1, 0.9]]],
                     "initial_state": 0, "state_features": [[1.0], [-1.0]]},
            "horizon": 3, "shat": [40.0], "eps": [0.1]}"#,
    )
    .unwrap();
    let out = reirl(dir.path(), &["oracle-check", "--spec", spec.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_record(&out)["error"], "infeasible");
}

#[test]
fn artifacts_from_another_config_need_force() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = d.join("spec.toml");
    fs::write(&spec, "n = 200\nhorizon = 3\n").unwrap();
    ok(&reirl(d, &["--seed", "9", "simulate", "--spec", spec.to_str().unwrap()]));
    let sim = read(&d.join("simulation.json"));
    // the spec omits the seed, so the run seed applies
    assert_eq!(sim["payload"]["spec"]["seed"], 9);
    assert!(d.join("trajectories_H3.json").exists());

    let out = reirl(d, &["--seed", "9", "--k", "7", "policy"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_record(&out)["error"], "config-hash-mismatch");
    ok(&reirl(d, &["--seed", "9", "--k", "7", "--force", "policy"]));
    let manifest = read(&d.join("manifest-policy.json"));
    assert!(manifest["warnings"].as_array().unwrap().iter().any(|w| w.as_str().unwrap().contains("--force")));
}

#[test]
fn exact_policy_estimate_recovers_signs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&reirl(d, &["--seed", "1", "simulate"]));
    let policy = d.join("policy_exact.json");
    ok(&reirl(d, &["--seed", "1", "estimate", "--policy", policy.to_str().unwrap()]));
    let rec = read(&d.join("theta_H4.json"));
    let theta: Vec<f64> = rec["payload"]["theta"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(theta[0] > 0.5 && theta[1] < -0.2 && theta[2] > 0.2, "{theta:?}");
}
