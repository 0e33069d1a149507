//! The shipped case fixtures replayed through the whole pipeline.

use std::path::{Path, PathBuf};
use std::process::Command;

use nl2vis_core::gateway::{GatewayError, INDEX_FILE};
use nl2vis_core::harness::{
    static_chart_family, ChartFamily, CheckOutcome, Harness, HarnessError,
};
use nl2vis_core::pipeline::Pipeline;
use nl2vis_core::sandbox::SandboxRunner;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn harness() -> Harness {
    Harness::new(root().join("fixtures"), root().join("data"))
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

#[tokio::test]
async fn static_suite_passes_with_recorded_divergences() {
    let report = harness().run_all(false).await.unwrap();
    assert_eq!(report.cases.len(), 6);
    assert!(report.is_success(), "{report}");
    assert_eq!(report.totals.known_divergences, 2, "{report}");

    let case3 = &report.cases[2];
    assert_eq!(
        case3.check("code-davinci-002", "filter").unwrap().outcome,
        CheckOutcome::KnownDivergence
    );
    for model in ["text-davinci-003", "gpt-3.5-turbo"] {
        assert_eq!(case3.check(model, "filter").unwrap().outcome, CheckOutcome::Pass);
    }
    let case6 = &report.cases[5];
    assert_eq!(
        case6.check("code-davinci-002", "legible_axis").unwrap().outcome,
        CheckOutcome::KnownDivergence
    );
}

#[tokio::test]
async fn every_expectation_reported_once_per_model() {
    let h = harness();
    for fixture in h.fixtures().unwrap() {
        let report = h.run_case(&fixture, false).await.unwrap();
        let e = &fixture.expectations;
        let expected = 2 // prompt, sanitize
            + 1 // chart family
            + e.must_reference_columns.len()
            + usize::from(e.must_contain_filter.is_some())
            + 1 // legible axis
            + 1; // execution
        assert_eq!(report.models.len(), fixture.models.len());
        for model in &report.models {
            assert_eq!(model.checks.len(), expected, "{} {}", fixture.case_id, model.model);
            let mut names: Vec<_> = model.checks.iter().map(|c| c.name.as_str()).collect();
            names.sort();
            names.dedup();
            assert_eq!(names.len(), expected);
        }
    }
}

#[tokio::test]
async fn replay_is_deterministic() {
    let a = harness().run_all(false).await.unwrap();
    let b = harness().run_all(false).await.unwrap();
    assert_eq!(a, b);
    for (x, y) in a.cases.iter().zip(&b.cases) {
        assert_eq!(x.outcomes, y.outcomes);
    }
}

#[test]
fn chat_box_plot_is_detected() {
    let script =
        std::fs::read_to_string(root().join("fixtures/case2/gpt-3.5-turbo.txt")).unwrap();
    assert_eq!(static_chart_family(&script), ChartFamily::Box);
}

#[test]
fn shipped_index_matches_current_prompts() {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&root().join("fixtures"), dir.path());
    let rebuilt = Harness::new(dir.path(), root().join("data")).reindex().unwrap();
    let shipped: nl2vis_core::gateway::FixtureIndex = serde_json::from_str(
        &std::fs::read_to_string(root().join("fixtures").join(INDEX_FILE)).unwrap(),
    )
    .unwrap();
    assert_eq!(rebuilt, shipped);
    assert_eq!(rebuilt.len(), 18);
}

#[tokio::test]
async fn changed_prompt_is_a_missing_fixture() {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&root().join("fixtures"), dir.path());
    let meta = dir.path().join("case5/meta.json");
    let text = std::fs::read_to_string(&meta)
        .unwrap()
        .replace("numbr of movie", "number of movies");
    std::fs::write(&meta, text).unwrap();

    let h = Harness::new(dir.path(), root().join("data"));
    let fixture = h
        .fixtures()
        .unwrap()
        .into_iter()
        .find(|f| f.case_id == "case5")
        .unwrap();
    match h.run_case(&fixture, false).await {
        Err(HarnessError::Gateway(GatewayError::FixtureMissing { expected_path, .. })) => {
            assert!(expected_path.contains("case5"), "{expected_path}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[tokio::test]
async fn empty_fixture_dir_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let h = Harness::new(dir.path(), root().join("data"));
    assert!(matches!(h.run_all(false).await, Err(HarnessError::NoFixtures(_))));
}

#[tokio::test]
async fn every_fixture_script_renders() {
    let available = Command::new("python3")
        .args(["-c", "import pandas, matplotlib"])
        .output()
        .is_ok_and(|o| o.status.success());
    if !available {
        eprintln!("skipping: python3 with pandas and matplotlib not available");
        return;
    }
    let runner = SandboxRunner::new(
        "python3",
        vec![PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("tests/stubs/runner.py")
            .display()
            .to_string()],
    );
    let h = harness().with_pipeline(Pipeline::default().with_sandbox(runner));
    let report = h.run_all(true).await.unwrap();
    assert!(report.is_success(), "{report}");
    for case in &report.cases {
        for model in &case.models {
            assert_eq!(model.exec_ok, Some(true), "{} {}", case.case_id, model.model);
        }
    }
}
