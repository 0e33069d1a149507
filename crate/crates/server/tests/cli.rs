//! The `nl2vis` binary run as a subprocess.

use std::path::PathBuf;
use std::process::{Command, Output};

const CASE1_QUERY: &str = "What is the highest price of product, grouped by product type? \
                           Show a bar chart, and display by the names in desc.";

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn nl2vis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nl2vis"))
        .args(args)
        .env_remove("NL2VIS_RUNNER")
        .env_remove("OPENAI_API_KEY")
        .output()
        .unwrap()
}

fn run_case1(out: &std::path::Path, extra: &[&str]) -> Output {
    let dataset = root().join("data/department_store.sqlite");
    let fixtures = root().join("fixtures");
    let mut args = vec![
        "run",
        "--dataset",
        dataset.to_str().unwrap(),
        "--table",
        "products",
        "--query",
        CASE1_QUERY,
        "--fixtures",
        fixtures.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    nl2vis(&args)
}

#[test]
fn run_without_execution_writes_artifacts() {
    let out = tempfile::tempdir().unwrap();
    let output = run_case1(out.path(), &["--no-exec"]);
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));

    let read = |name: &str| std::fs::read_to_string(out.path().join(name)).unwrap();
    let golden = |name: &str| std::fs::read_to_string(root().join(name)).unwrap();
    assert_eq!(read("prompt.txt"), golden("prompts/case1_full.txt"));
    assert_eq!(
        read("raw.txt"),
        golden("fixtures/case1/text-davinci-003.txt")
    );
    assert_eq!(read("script.txt"), golden("scripts/case1_sanitized.txt"));
    assert!(!out.path().join("chart.png").exists());
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let out = tempfile::tempdir().unwrap();
    let output = nl2vis(&[
        "run",
        "--dataset",
        "/no/such/file.csv",
        "--query",
        "tomatoes",
        "--no-exec",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&output.stderr).is_empty());
}

#[test]
fn execution_needs_a_runner() {
    let out = tempfile::tempdir().unwrap();
    let output = run_case1(out.path(), &[]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn run_with_runner_writes_chart() {
    let available = Command::new("python3")
        .args(["-c", "import pandas, matplotlib"])
        .output()
        .is_ok_and(|o| o.status.success());
    if !available {
        eprintln!("skipping: python3 with pandas and matplotlib not available");
        return;
    }
    let out = tempfile::tempdir().unwrap();
    let runner = format!(
        "python3 {}",
        root().join("crates/core/tests/stubs/runner.py").display()
    );
    let output = run_case1(out.path(), &["--runner", &runner]);
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));
    let png = std::fs::read(out.path().join("chart.png")).unwrap();
    assert!(png.starts_with(b"\x89PNG\r\n\x1a\n"));
}

#[test]
fn cases_command_reports_success() {
    let output = nl2vis(&[
        "cases",
        "--fixtures",
        root().join("fixtures").to_str().unwrap(),
        "--data",
        root().join("data").to_str().unwrap(),
        "--json",
    ]);
    assert_eq!(output.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(report["cases"].as_array().unwrap().len(), 6);
    assert_eq!(report["totals"]["failed"], 0);
}
