//! Replays recorded case studies through the pipeline and checks structural
//! properties of the scripts each model produced.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gateway::{fixture_key, FixtureIndex, GatewayError, ModelId, ReplayProvider, INDEX_FILE};
use crate::ingest::{load_csv, load_sqlite, IngestError, TableFrame};
use crate::pipeline::{prepare, ModelOutcome, Pipeline, PreparedQuery, Stage};
use crate::profile::DTypeName;
use crate::prompt::{PromptConfig, PromptError};
use crate::sandbox::png_dimensions;

pub const META_FILE: &str = "meta.json";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("no case fixtures under {0}")]
    NoFixtures(PathBuf),
    #[error("{path}: {reason}")]
    Meta { path: PathBuf, reason: String },
    #[error("dataset {path}: {source}")]
    Dataset {
        path: PathBuf,
        #[source]
        source: IngestError,
    },
    #[error("dataset {path} has no table `{table}`")]
    UnknownTable { path: PathBuf, table: String },
    #[error("case {case_id}: {source}")]
    Prompt {
        case_id: String,
        #[source]
        source: PromptError,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartFamily {
    Bar,
    Line,
    Scatter,
    Box,
    Histogram,
    Any,
}

impl fmt::Display for ChartFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChartFamily::Bar => "bar",
            ChartFamily::Line => "line",
            ChartFamily::Scatter => "scatter",
            ChartFamily::Box => "box",
            ChartFamily::Histogram => "histogram",
            ChartFamily::Any => "any",
        })
    }
}

static FAMILY_CALLS: LazyLock<Vec<(ChartFamily, Regex)>> = LazyLock::new(|| {
    let table = [
        (
            ChartFamily::Bar,
            r#"\.barh?\(|\bsns\.(barplot|countplot)\(|\bkind\s*=\s*['"]barh?['"]"#,
        ),
        (
            ChartFamily::Line,
            r#"\.plot\.line\(|\bsns\.lineplot\(|\bkind\s*=\s*['"]line['"]"#,
        ),
        (
            ChartFamily::Scatter,
            r#"\.scatter\(|\bsns\.scatterplot\(|\bkind\s*=\s*['"]scatter['"]"#,
        ),
        (
            ChartFamily::Box,
            r#"\.boxplot\(|\.plot\.box\(|\bkind\s*=\s*['"]box['"]"#,
        ),
        (
            ChartFamily::Histogram,
            r#"\.hist\(|\bsns\.histplot\(|\bkind\s*=\s*['"]hist['"]"#,
        ),
    ];
    table
        .into_iter()
        .map(|(family, pattern)| (family, Regex::new(pattern).expect("family pattern")))
        .collect()
});

static GENERIC_PLOT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\.plot\(").unwrap());

/// Guess the chart family from plotting calls. The earliest specific call
/// wins; a bare `.plot(` counts as a line chart; otherwise `Any`.
pub fn static_chart_family(script: &str) -> ChartFamily {
    FAMILY_CALLS
        .iter()
        .filter_map(|(family, re)| re.find(script).map(|m| (m.start(), *family)))
        .min_by_key(|(pos, _)| *pos)
        .map(|(_, family)| family)
        .unwrap_or_else(|| {
            if GENERIC_PLOT.is_match(script) {
                ChartFamily::Line
            } else {
                ChartFamily::Any
            }
        })
}

static BAR_OVER_COLUMN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"\.barh?\(\s*\w+\[\s*['"]([^'"]+)['"]\s*\]"#).unwrap());

/// Text columns whose values are too many to enumerate and that a bar call
/// uses directly as its categories, one bar per row.
pub fn crowded_bar_axes(script: &str, prepared: &PreparedQuery) -> Vec<String> {
    BAR_OVER_COLUMN
        .captures_iter(script)
        .filter_map(|c| {
            let name = &c[1];
            prepared
                .profile
                .columns
                .iter()
                .find(|p| p.name == name)
                .filter(|p| p.dtype == DTypeName::Object && p.categorical_values.is_none())
                .map(|p| p.name.clone())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Csv,
    Sqlite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub kind: DatasetKind,
    /// Relative to the data directory.
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterExpectation {
    pub description: String,
    pub pattern: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnownDivergence {
    pub model: String,
    pub check: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expectations {
    pub chart_family: ChartFamily,
    #[serde(default)]
    pub must_reference_columns: Vec<String>,
    #[serde(default)]
    pub must_contain_filter: Option<FilterExpectation>,
    /// Per-model family that replaces `chart_family` for that model.
    #[serde(default)]
    pub allow_family_divergence_per_model: BTreeMap<String, ChartFamily>,
    #[serde(default)]
    pub known_divergences: Vec<KnownDivergence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseFixture {
    pub case_id: String,
    pub title: String,
    pub dataset: DatasetRef,
    pub query: String,
    pub models: Vec<ModelId>,
    pub expectations: Expectations,
}

impl CaseFixture {
    pub fn load(case_dir: &Path) -> Result<Self, HarnessError> {
        let path = case_dir.join(META_FILE);
        let raw = std::fs::read_to_string(&path).map_err(|e| HarnessError::Meta {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let fixture: CaseFixture = serde_json::from_str(&raw).map_err(|e| HarnessError::Meta {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        if let Some(filter) = &fixture.expectations.must_contain_filter {
            Regex::new(&filter.pattern).map_err(|e| HarnessError::Meta {
                path,
                reason: format!("filter pattern: {e}"),
            })?;
        }
        Ok(fixture)
    }

    fn expected_family(&self, model: &str) -> ChartFamily {
        self.expectations
            .allow_family_divergence_per_model
            .get(model)
            .copied()
            .unwrap_or(self.expectations.chart_family)
    }

    fn known_divergence(&self, model: &str, check: &str) -> Option<&KnownDivergence> {
        self.expectations
            .known_divergences
            .iter()
            .find(|d| d.model == model && d.check == check)
    }
}

/// Load a dataset reference into one frame. CSV frames are named after the
/// file stem, SQLite frames after their table.
pub fn load_dataset(data_root: &Path, dataset: &DatasetRef) -> Result<TableFrame, HarnessError> {
    let path = data_root.join(&dataset.path);
    match dataset.kind {
        DatasetKind::Csv => {
            let bytes = std::fs::read(&path).map_err(|e| HarnessError::Io {
                path: path.clone(),
                source: e,
            })?;
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("data")
                .to_string();
            load_csv(&bytes, &name).map_err(|source| HarnessError::Dataset { path, source })
        }
        DatasetKind::Sqlite => {
            let frames = load_sqlite(&path).map_err(|source| HarnessError::Dataset {
                path: path.clone(),
                source,
            })?;
            let table = dataset.table.clone().unwrap_or_default();
            frames
                .into_iter()
                .find(|f| f.name() == table)
                .ok_or(HarnessError::UnknownTable { path, table })
        }
    }
}

/// Every `<root>/<case>/meta.json`, ordered by case directory name.
pub fn load_fixtures(root: &Path) -> Result<Vec<CaseFixture>, HarnessError> {
    let entries = std::fs::read_dir(root).map_err(|e| HarnessError::Io {
        path: root.to_path_buf(),
        source: e,
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join(META_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(HarnessError::NoFixtures(root.to_path_buf()));
    }
    dirs.iter().map(|d| CaseFixture::load(d)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckOutcome {
    Pass,
    Fail,
    KnownDivergence,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub outcome: CheckOutcome,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub prompt_ok: bool,
    pub sanitize_ok: bool,
    pub detected_family: Option<ChartFamily>,
    pub checks: Vec<CheckResult>,
    pub exec_ok: Option<bool>,
    pub exec_duration_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub passed: usize,
    pub failed: usize,
    pub known_divergences: usize,
    pub skipped: usize,
}

impl Tally {
    fn add(&mut self, outcome: CheckOutcome) {
        match outcome {
            CheckOutcome::Pass => self.passed += 1,
            CheckOutcome::Fail => self.failed += 1,
            CheckOutcome::KnownDivergence => self.known_divergences += 1,
            CheckOutcome::Skipped => self.skipped += 1,
        }
    }

    fn merge(&mut self, other: Tally) {
        self.passed += other.passed;
        self.failed += other.failed;
        self.known_divergences += other.known_divergences;
        self.skipped += other.skipped;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    pub query: String,
    pub models: Vec<ModelReport>,
    pub summary: Tally,
    /// Full pipeline outcomes, for callers that want the artifacts.
    #[serde(skip)]
    pub outcomes: Vec<ModelOutcome>,
}

impl CaseReport {
    pub fn check(&self, model: &str, name: &str) -> Option<&CheckResult> {
        self.models
            .iter()
            .find(|m| m.model == model)?
            .checks
            .iter()
            .find(|c| c.name == name)
    }

    /// Same report with execution timings cleared, for comparing runs.
    pub fn without_timings(&self) -> Self {
        let mut copy = self.clone();
        for m in &mut copy.models {
            m.exec_duration_ms = None;
        }
        for o in &mut copy.outcomes {
            if let Some(exec) = &mut o.execution {
                exec.duration_ms = 0;
            }
        }
        copy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub cases: Vec<CaseReport>,
    pub totals: Tally,
}

impl SuiteReport {
    pub fn is_success(&self) -> bool {
        self.totals.failed == 0
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for case in &self.cases {
            writeln!(f, "{}: {}", case.case_id, case.query)?;
            for model in &case.models {
                for check in &model.checks {
                    let mark = match check.outcome {
                        CheckOutcome::Pass => "pass",
                        CheckOutcome::Fail => "FAIL",
                        CheckOutcome::KnownDivergence => "known",
                        CheckOutcome::Skipped => "skip",
                    };
                    writeln!(f, "  [{mark:5}] {:18} {:24} {}", model.model, check.name, check.detail)?;
                }
            }
        }
        let t = &self.totals;
        write!(
            f,
            "{} passed, {} failed, {} known divergences, {} skipped",
            t.passed, t.failed, t.known_divergences, t.skipped
        )
    }
}

pub struct Harness {
    fixtures_root: PathBuf,
    data_root: PathBuf,
    pipeline: Pipeline,
}

impl Harness {
    pub fn new(fixtures_root: impl Into<PathBuf>, data_root: impl Into<PathBuf>) -> Self {
        Self {
            fixtures_root: fixtures_root.into(),
            data_root: data_root.into(),
            pipeline: Pipeline::default(),
        }
    }

    pub fn with_pipeline(mut self, pipeline: Pipeline) -> Self {
        self.pipeline = pipeline;
        self
    }

    pub fn fixtures(&self) -> Result<Vec<CaseFixture>, HarnessError> {
        load_fixtures(&self.fixtures_root)
    }

    pub fn prepare(&self, fixture: &CaseFixture) -> Result<PreparedQuery, HarnessError> {
        let frame = load_dataset(&self.data_root, &fixture.dataset)?;
        let config = PromptConfig::for_frame(frame.name());
        prepare(&frame, &fixture.query, config).map_err(|source| HarnessError::Prompt {
            case_id: fixture.case_id.clone(),
            source,
        })
    }

    pub async fn run_case(
        &self,
        fixture: &CaseFixture,
        with_execution: bool,
    ) -> Result<CaseReport, HarnessError> {
        let prepared = self.prepare(fixture)?;
        let provider = ReplayProvider::open(&self.fixtures_root)?.scoped_to(&fixture.case_id);
        for model in &fixture.models {
            provider.lookup(&model.wire_name, &prepared.prompt.full_text)?;
        }
        let outcomes = self
            .pipeline
            .run_models(&prepared, &fixture.models, &provider, with_execution)
            .await;

        let mut summary = Tally::default();
        let models = outcomes
            .iter()
            .map(|outcome| {
                let report = evaluate(fixture, &prepared, outcome, with_execution);
                for check in &report.checks {
                    summary.add(check.outcome);
                }
                report
            })
            .collect();
        Ok(CaseReport {
            case_id: fixture.case_id.clone(),
            query: fixture.query.clone(),
            models,
            summary,
            outcomes,
        })
    }

    pub async fn run_all(&self, with_execution: bool) -> Result<SuiteReport, HarnessError> {
        let mut cases = Vec::new();
        let mut totals = Tally::default();
        for fixture in self.fixtures()? {
            let report = self.run_case(&fixture, with_execution).await?;
            totals.merge(report.summary);
            cases.push(report);
        }
        Ok(SuiteReport { cases, totals })
    }

    /// Rebuild `index.json` from the current prompts and the recorded reply
    /// files. Run after any intentional change to prompt wording.
    pub fn reindex(&self) -> Result<FixtureIndex, HarnessError> {
        let mut index = FixtureIndex::new();
        for fixture in self.fixtures()? {
            let prepared = self.prepare(&fixture)?;
            for model in &fixture.models {
                let relative = format!("{}/{}.txt", fixture.case_id, model.wire_name);
                let path = self.fixtures_root.join(&relative);
                if !path.is_file() {
                    return Err(HarnessError::Gateway(GatewayError::FixtureMissing {
                        wire_name: model.wire_name.clone(),
                        key: fixture_key(&model.wire_name, &prepared.prompt.full_text),
                        expected_path: path.display().to_string(),
                    }));
                }
                index.insert(
                    fixture_key(&model.wire_name, &prepared.prompt.full_text),
                    relative,
                );
            }
        }
        let path = self.fixtures_root.join(INDEX_FILE);
        let mut json = serde_json::to_string_pretty(&index).expect("index serializes");
        json.push('\n');
        std::fs::write(&path, json).map_err(|source| HarnessError::Io { path, source })?;
        Ok(index)
    }
}

fn check(
    fixture: &CaseFixture,
    model: &str,
    name: impl Into<String>,
    passed: bool,
    detail: impl Into<String>,
) -> CheckResult {
    let name = name.into();
    let mut detail = detail.into();
    let outcome = if passed {
        CheckOutcome::Pass
    } else if let Some(d) = fixture.known_divergence(model, &name) {
        detail = format!("{detail} ({})", d.note);
        CheckOutcome::KnownDivergence
    } else {
        CheckOutcome::Fail
    };
    CheckResult {
        name,
        outcome,
        detail,
    }
}

fn skipped(name: impl Into<String>, detail: &str) -> CheckResult {
    CheckResult {
        name: name.into(),
        outcome: CheckOutcome::Skipped,
        detail: detail.to_string(),
    }
}

fn references_column(script: &str, column: &str) -> bool {
    script.contains(&format!("'{column}'")) || script.contains(&format!("\"{column}\""))
}

/// One entry per expectation, in a fixed order, whatever happened upstream.
fn evaluate(
    fixture: &CaseFixture,
    prepared: &PreparedQuery,
    outcome: &ModelOutcome,
    with_execution: bool,
) -> ModelReport {
    let model = outcome.model.wire_name.as_str();
    let expectations = &fixture.expectations;
    let prompt_ok = outcome.prompt_full_text == prepared.prompt.full_text
        && outcome.prompt_full_text.contains(&fixture.query);
    let stage_failed = |stage| outcome.error.as_ref().is_some_and(|e| e.stage == stage);
    let sanitize_ok = outcome.sanitized_script.is_some()
        && outcome.denied.is_none()
        && !stage_failed(Stage::Complete)
        && !stage_failed(Stage::Sanitize);

    let mut checks = vec![
        check(fixture, model, "prompt", prompt_ok, "prompt carries the query verbatim"),
        check(
            fixture,
            model,
            "sanitize",
            sanitize_ok,
            match (&outcome.error, &outcome.denied) {
                (Some(e), _) if e.stage != Stage::Execute => format!("{}: {}", e.stage, e.message),
                (_, Some(d)) => format!("denied: {} `{}`", d.category, d.matched_text),
                _ => "runnable script".to_string(),
            },
        ),
    ];

    let script = outcome.sanitized_script.as_deref().filter(|_| sanitize_ok);
    let detected_family = script.map(static_chart_family);
    let unavailable = "no sanitized script";

    let expected = fixture.expected_family(model);
    checks.push(match detected_family {
        Some(found) => check(
            fixture,
            model,
            "chart_family",
            expected == ChartFamily::Any || found == expected,
            format!("expected {expected}, found {found}"),
        ),
        None => check(fixture, model, "chart_family", false, unavailable),
    });

    for column in &expectations.must_reference_columns {
        let name = format!("references:{column}");
        checks.push(match script {
            Some(s) => check(
                fixture,
                model,
                name,
                references_column(s, column),
                format!("script mentions '{column}'"),
            ),
            None => check(fixture, model, name, false, unavailable),
        });
    }

    if let Some(filter) = &expectations.must_contain_filter {
        let re = Regex::new(&filter.pattern).expect("validated on load");
        checks.push(match script {
            Some(s) => check(fixture, model, "filter", re.is_match(s), filter.description.clone()),
            None => check(fixture, model, "filter", false, unavailable),
        });
    }

    checks.push(match script {
        Some(s) => {
            let crowded = crowded_bar_axes(s, prepared);
            let detail = if crowded.is_empty() {
                "bar categories are enumerable".to_string()
            } else {
                format!("one bar per row of {}", crowded.join(", "))
            };
            check(fixture, model, "legible_axis", crowded.is_empty(), detail)
        }
        None => check(fixture, model, "legible_axis", false, unavailable),
    });

    let execution = outcome.execution.as_ref();
    let (exec_ok, exec_duration_ms) = if with_execution {
        let ok = execution.is_some_and(|e| {
            e.is_ok() && e.image_png.as_deref().and_then(png_dimensions).is_some()
        });
        let detail = match (execution, &outcome.error) {
            (_, Some(e)) => format!("{}: {}", e.stage, e.message),
            (Some(e), None) => format!("{:?}", e.status),
            (None, None) => "not executed".to_string(),
        };
        checks.push(check(fixture, model, "execution", ok, detail));
        (Some(ok), execution.map(|e| e.duration_ms))
    } else {
        checks.push(skipped("execution", "static run"));
        (None, None)
    };

    ModelReport {
        model: model.to_string(),
        prompt_ok,
        sanitize_ok,
        detected_family,
        checks,
        exec_ok,
        exec_duration_ms,
    }
}
