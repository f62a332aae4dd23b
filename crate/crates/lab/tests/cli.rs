//! End-to-end tests of the fpf-lab binary: exit codes, file outputs, and
//! byte-level determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fpf-lab");

const SCENARIO: &str = r#"{
    "prior": {"type": "gaussian", "mean": 0.0, "std": 1.0},
    "observation": "tanh",
    "true_state": 0.4,
    "horizon": 0.2,
    "steps": 60,
    "particles": 400,
    "seed": 7,
    "posterior_stride": 30
}"#;

fn write_scenario(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("scenario.json");
    fs::write(&path, text).unwrap();
    path
}

fn run_cli(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

#[test]
fn run_writes_expected_files_and_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SCENARIO);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let output = run_cli(&[
            "run",
            "--scenario",
            scenario.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(output.status.success(), "{output:?}");
    }

    let csv = fs::read_to_string(out_a.join("run.csv")).unwrap();
    assert!(csv.starts_with(
        "step,t,z,h_hat,emp_mean,emp_var,ref_mean,ref_var,ks_dist,l1_dist,gain_flux_residual\n"
    ));
    assert_eq!(csv.lines().count(), 61);

    // identical config + seed means byte-identical outputs
    assert_eq!(
        fs::read(out_a.join("run.csv")).unwrap(),
        fs::read(out_b.join("run.csv")).unwrap()
    );

    // density snapshots at the stride plus the terminal step
    for step in ["000030", "000060"] {
        let snap = fs::read_to_string(out_a.join(format!("density_{step}.csv"))).unwrap();
        assert!(snap.starts_with("x,rho\n"));
        assert_eq!(snap.lines().count(), 513);
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert!(manifest["config_hash"].as_str().unwrap().len() == 64);
    assert_eq!(manifest["config"]["steps"], 60);
    assert!(manifest["versions"]["fpf-core"].is_string());
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SCENARIO);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let base = [
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
    ];
    let mut args_a: Vec<&str> = base.to_vec();
    args_a.push(out_a.to_str().unwrap());
    assert!(run_cli(&args_a).status.success());
    let mut args_b: Vec<&str> = base.to_vec();
    args_b.push(out_b.to_str().unwrap());
    args_b.extend(["--seed", "8"]);
    assert!(run_cli(&args_b).status.success());
    assert_ne!(
        fs::read(out_a.join("run.csv")).unwrap(),
        fs::read(out_b.join("run.csv")).unwrap()
    );
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        SCENARIO.replace("\"steps\": 60", "\"steps\": 0"),
        SCENARIO.replace("\"seed\": 7", "\"seed\": 7, \"unknown_knob\": 1"),
        SCENARIO.replace("\"tanh\"", "\"sinh\""),
    ];
    for (i, text) in cases.iter().enumerate() {
        let scenario = dir.path().join(format!("bad{i}.json"));
        fs::write(&scenario, text).unwrap();
        let out = dir.path().join(format!("out{i}"));
        let output = run_cli(&[
            "run",
            "--scenario",
            scenario.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(output.status.code(), Some(2), "case {i}: {output:?}");
    }
}

#[test]
fn convergence_errors_shrink_with_refinement() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SCENARIO);
    let output = run_cli(&[
        "convergence",
        "--scenario",
        scenario.to_str().unwrap(),
        "--refinements",
        "2",
    ]);
    assert!(output.status.success(), "{output:?}");
    let text = String::from_utf8(output.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("level,steps,dt,sup_rel_error"));
    let errs: Vec<f64> = lines
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    assert_eq!(errs.len(), 3);
    assert!(errs[2] < errs[0], "{errs:?}");
}

#[test]
fn gain_demo_prints_all_three_solvers() {
    let output = run_cli(&["gain-demo", "--prior", "gaussian:0,1", "--obs", "linear"]);
    assert!(output.status.success(), "{output:?}");
    let text = String::from_utf8(output.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,exact1d,fd,galerkin"));
    // near the center every solver should report K close to the variance
    let center = text
        .lines()
        .skip(1)
        .map(|l| {
            let cells: Vec<f64> = l.split(',').map(|c| c.parse().unwrap()).collect();
            cells
        })
        .min_by(|a, b| a[0].abs().partial_cmp(&b[0].abs()).unwrap())
        .unwrap();
    for k in &center[1..] {
        assert!((k - 1.0).abs() < 1e-3, "{center:?}");
    }
}

#[test]
fn verify_passes() {
    let output = run_cli(&["verify"]);
    assert!(output.status.success(), "{output:?}");
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.lines().count() >= 7);
    assert!(text.lines().all(|l| l.starts_with("ok ")), "{text}");
}
