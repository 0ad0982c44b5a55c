//! End-to-end CLI checks: subcommands, file outputs, and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_aggsim");

fn aggsim(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_tiny_inputs(dir: &Path) {
    fs::write(
        dir.join("tiny.edges"),
        "1 2\n2 3\n3 4\n4 5\n5 6\n6 7\n7 8\n8 1\n",
    )
    .unwrap();
    fs::write(
        dir.join("tiny.dataset"),
        "1 0.040 0.05 5.0 0.0 0.25\n2 0.030\n3 0.020\n4 0.040\n5 0.030\n6 0.020\n7 0.040\n8 0.030 0.04 5.001 0.0 0.30\n",
    )
    .unwrap();
}

fn write_tiny_scenario(dir: &Path, schedule: &str, granularities: &str, caps: &str) -> String {
    let text = format!(
        r#"{{
  "feeder": "tiny.edges",
  "dataset": "tiny.dataset",
  "granularities": {granularities},
  "epsilon": 0.005,
  "max_iterations": {caps},
  "hyper": {{"alpha0": 0.01, "beta0": 0.3}},
  "lambda0": 5.0,
  "schedule": [{schedule}],
  "seed": 1,
  "output_dir": "out"
}}"#
    );
    let path = dir.join("tiny.scenario");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn simulate_writes_traces_and_summary_and_prints_the_table() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_inputs(dir.path());
    let scenario = write_tiny_scenario(dir.path(), "", "[4, 8]", r#"{"4": 4000, "8": 4000}"#);
    let out_dir = dir.path().join("results");
    let output = aggsim(&[
        "simulate",
        &scenario,
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("K,iters_no_disruption,iters_with_disruption"));
    for name in [
        "trace_k004_no_disruption.csv",
        "trace_k004_with_disruption.csv",
        "trace_k008_no_disruption.csv",
        "trace_k008_with_disruption.csv",
        "summary.csv",
        "summary.json",
    ] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
}

#[test]
fn simulate_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_inputs(dir.path());
    let scenario = write_tiny_scenario(dir.path(), "", "[4]", r#"{"4": 4000}"#);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    assert!(aggsim(&["simulate", &scenario, "--output-dir", out_a.to_str().unwrap()])
        .status
        .success());
    assert!(aggsim(&["simulate", &scenario, "--output-dir", out_b.to_str().unwrap()])
        .status
        .success());
    for entry in fs::read_dir(&out_a).unwrap() {
        let name = entry.unwrap().file_name();
        let a = fs::read(out_a.join(&name)).unwrap();
        let b = fs::read(out_b.join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} differs between runs");
    }
}

#[test]
fn validate_reports_and_exits_zero_on_clean_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_inputs(dir.path());
    let scenario = write_tiny_scenario(
        dir.path(),
        r#"{"nodes": [4, 5], "start": 3, "end": 12}"#,
        "[4, 8]",
        r#"{"4": 4000, "8": 4000}"#,
    );
    let output = aggsim(&["validate", &scenario]);
    assert!(output.status.success(), "{output:?}");
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("scenario_hash:"));
    assert!(stdout.contains("connected"));
    assert!(!stdout.contains("ISLANDED"));
}

#[test]
fn islanding_exits_4_unless_overridden() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.edges"), "1 2\n2 3\n").unwrap();
    fs::write(
        dir.path().join("tiny.dataset"),
        "1 0.04 0.05 5.0 0.0 0.5\n2 0.03\n3 0.02 0.04 5.001 0.0 0.5\n",
    )
    .unwrap();
    let scenario = write_tiny_scenario(
        dir.path(),
        r#"{"nodes": [2, 3], "start": 2, "end": 30}"#,
        "[2]",
        r#"{"2": 500}"#,
    );
    let out_dir = dir.path().join("results");
    let run = aggsim(&["simulate", &scenario, "--output-dir", out_dir.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(4), "{run:?}");
    let check = aggsim(&["validate", &scenario]);
    assert_eq!(check.status.code(), Some(4), "{check:?}");
    let overridden = aggsim(&[
        "simulate",
        &scenario,
        "--output-dir",
        out_dir.to_str().unwrap(),
        "--allow-islanding",
    ]);
    assert!(overridden.status.success(), "{overridden:?}");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scenario");
    fs::write(&bad, r#"{"feeder": "f", "unknown_key": 1}"#).unwrap();
    let output = aggsim(&["simulate", bad.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2), "{output:?}");

    // a listed granularity without a cap is a config error too
    write_tiny_inputs(dir.path());
    let missing_cap = dir.path().join("cap.scenario");
    fs::write(
        &missing_cap,
        r#"{"feeder": "tiny.edges", "dataset": "tiny.dataset", "granularities": [2, 4],
            "epsilon": 0.005, "max_iterations": {"2": 10}, "seed": 0}"#,
    )
    .unwrap();
    let output = aggsim(&["validate", missing_cap.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2), "{output:?}");
}

#[test]
fn infeasible_dispatch_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // load exceeds total capacity
    let dataset = dir.path().join("infeasible.dataset");
    fs::write(&dataset, "1 5.0 0.05 5.0 0.0 0.5\n2 3.0\n").unwrap();
    let output = aggsim(&["solve", dataset.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(3), "{output:?}");
}

#[test]
fn solve_prints_dispatch_json() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("two.dataset");
    fs::write(&dataset, "1 1.0 0.5 0.0 0.0 10.0\n2 1.0 0.5 0.0 0.0 10.0\n").unwrap();
    let output = aggsim(&["solve", dataset.to_str().unwrap()]);
    assert!(output.status.success(), "{output:?}");
    let stdout = String::from_utf8(output.stdout).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!((parsed["lambda_star"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(parsed["outputs"].as_array().unwrap().len(), 2);
    // field order is pinned for golden comparisons
    let lambda_pos = stdout.find("lambda_star").unwrap();
    let outputs_pos = stdout.find("outputs").unwrap();
    let cost_pos = stdout.find("cost").unwrap();
    assert!(lambda_pos < outputs_pos && outputs_pos < cost_pos);
}

#[test]
fn partition_prints_one_row_per_node() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_inputs(dir.path());
    let feeder = dir.path().join("tiny.edges");
    let output = aggsim(&["partition", feeder.to_str().unwrap(), "--k", "4", "--seed", "3"]);
    assert!(output.status.success(), "{output:?}");
    let stdout = String::from_utf8(output.stdout).unwrap();
    let rows: Vec<&str> = stdout.lines().collect();
    assert_eq!(rows.len(), 8);
    for row in rows {
        let mut fields = row.split_whitespace();
        let _node: u32 = fields.next().unwrap().parse().unwrap();
        let cluster: usize = fields.next().unwrap().parse().unwrap();
        assert!(cluster < 4);
    }

    let bad = aggsim(&["partition", feeder.to_str().unwrap(), "--k", "0"]);
    assert_eq!(bad.status.code(), Some(2), "{bad:?}");
}

#[test]
fn missing_files_exit_1() {
    let output = aggsim(&["solve", "/nonexistent/file.dataset"]);
    assert_eq!(output.status.code(), Some(1), "{output:?}");
}
