//! End-to-end tests of the `fedq` binary: environment generation and
//! round-trip, experiment execution with byte-reproducible outputs, bound
//! reporting, the property suite, and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fedq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedq"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn experiment_json(out_dir: &Path, mdp_path: Option<&str>) -> String {
    let mdp_field = mdp_path.map_or(String::new(), |p| format!("\"mdp_path\": \"{p}\","));
    format!(
        r#"{{
  "run": {{
    "h": 3, "s": 2, "a": 2, "m": 2,
    "t0": 1800,
    "seed": 9,
    "constants": {{ "c_b": 1.4142135623730951, "c_b_r": 2.0, "c_b_r2": 1.0, "beta": 0.05 }},
    "iota_mode": {{ "fixed": {{ "value": 1.0 }} }},
    "algorithm": "fedq_eslc",
    "initial_state_mode": "uniform"
  }},
  "n_replications": 2,
  {mdp_field}
  "algorithms": ["fedq_eslc", "hoeffding_baseline"],
  "output_dir": "{}"
}}"#,
        out_dir.display()
    )
}

#[test]
fn gen_mdp_round_trips_and_reports_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("env.json");
    let result = fedq(&[
        "gen-mdp",
        "--horizon",
        "5",
        "--states",
        "3",
        "--actions",
        "2",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    let stdout = String::from_utf8(result.stdout).unwrap();
    assert!(stdout.contains("delta_min:"));
    assert!(stdout.contains("max conditional variance:"));
    assert!(stdout.contains("c_st:"));
    assert!(out.exists());
    assert!(dir.path().join("env.oracle.json").exists());

    let text = fs::read_to_string(&out).unwrap();
    let reloaded = fedq_core::mdp::TabularMdp::from_json(&text).unwrap();
    let direct = fedq_core::mdp::generate_random_mdp(5, 3, 2, 7).unwrap();
    assert_eq!(
        reloaded, direct,
        "file does not round-trip to the generated environment"
    );
}

#[test]
fn gen_mdp_flags_degenerate_environments() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tiny.json");
    let result = fedq(&[
        "gen-mdp",
        "--horizon",
        "1",
        "--states",
        "1",
        "--actions",
        "1",
        "--seed",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    let stdout = String::from_utf8(result.stdout).unwrap();
    assert!(stdout.contains("degenerate"));
    let stderr = String::from_utf8(result.stderr).unwrap();
    assert!(stderr.contains("warning"));
}

#[test]
fn run_emits_reproducible_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("out_a");
    let out_b = dir.path().join("out_b");
    let exp_path = dir.path().join("exp.json");
    fs::write(&exp_path, experiment_json(&out_a, None)).unwrap();

    let first = fedq(&["run", "--experiment", exp_path.to_str().unwrap()]);
    assert!(
        first.status.success(),
        "run failed: {}",
        String::from_utf8_lossy(&first.stderr)
    );
    for name in [
        "fedq_eslc_rep000.csv",
        "fedq_eslc_rep001.csv",
        "hoeffding_baseline_rep000.csv",
        "ensemble_fedq_eslc.json",
        "ensemble_hoeffding_baseline.json",
        "figure_fedq_eslc.csv",
        "bounds.json",
    ] {
        assert!(out_a.join(name).exists(), "missing artifact {name}");
    }
    let bounds = fs::read_to_string(out_a.join("bounds.json")).unwrap();
    assert!(bounds.contains("\"all_pass\":true"));

    // Rerunning into a second directory byte-reproduces every artifact.
    let second = fedq(&[
        "run",
        "--experiment",
        exp_path.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert!(second.status.success());
    for entry in fs::read_dir(&out_a).unwrap() {
        let name = entry.unwrap().file_name();
        let a = fs::read(out_a.join(&name)).unwrap();
        let b = fs::read(out_b.join(&name)).unwrap();
        assert_eq!(a, b, "artifact {name:?} not byte-identical across reruns");
    }
}

#[test]
fn run_uses_cached_environment_and_rejects_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    // Matching environment: accepted.
    let env_path = dir.path().join("env.json");
    let ok = fedq(&[
        "gen-mdp",
        "--horizon",
        "3",
        "--states",
        "2",
        "--actions",
        "2",
        "--seed",
        "9",
        "--out",
        env_path.to_str().unwrap(),
    ]);
    assert!(ok.status.success());
    let out = dir.path().join("out");
    let exp_path = dir.path().join("exp.json");
    fs::write(&exp_path, experiment_json(&out, Some("env.json"))).unwrap();
    let result = fedq(&["run", "--experiment", exp_path.to_str().unwrap()]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );

    // Mismatched dimensions: configuration error, exit code 2.
    let bad_env = dir.path().join("bad.json");
    let gen = fedq(&[
        "gen-mdp",
        "--horizon",
        "4",
        "--states",
        "3",
        "--actions",
        "2",
        "--seed",
        "9",
        "--out",
        bad_env.to_str().unwrap(),
    ]);
    assert!(gen.status.success());
    let exp_bad = dir.path().join("exp_bad.json");
    fs::write(&exp_bad, experiment_json(&out, Some("bad.json"))).unwrap();
    let result = fedq(&["run", "--experiment", exp_bad.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn invalid_configs_exit_with_code_two() {
    // single_eslc with two agents is a configuration error.
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let exp = experiment_json(&out, None)
        .replace("\"fedq_eslc\", \"hoeffding_baseline\"", "\"single_eslc\"");
    let exp_path = dir.path().join("exp.json");
    fs::write(&exp_path, exp).unwrap();
    let result = fedq(&["run", "--experiment", exp_path.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));

    // Missing experiment file.
    let result = fedq(&["run", "--experiment", "/nonexistent/exp.json"]);
    assert_eq!(result.status.code(), Some(2));

    // Bad CLI usage (clap) also exits 2.
    let result = fedq(&[
        "gen-mdp",
        "--horizon",
        "0",
        "--states",
        "1",
        "--actions",
        "1",
        "--out",
        "/tmp/x.json",
    ]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn verify_prints_a_line_per_property() {
    let result = fedq(&["verify"]);
    assert!(result.status.success());
    let stdout = String::from_utf8(result.stdout).unwrap();
    let pass_lines = stdout.lines().filter(|l| l.starts_with("PASS ")).count();
    assert!(
        pass_lines >= 6,
        "expected at least 6 properties, saw {pass_lines}:\n{stdout}"
    );
    assert!(!stdout.contains("FAIL"));
}
