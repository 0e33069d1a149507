//! Submitted queries and their per-model outcomes.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;
use std::time::{SystemTime, UNIX_EPOCH};

use nl2vis_core::gateway::ModelId;
use nl2vis_core::ingest::DatasetId;
use nl2vis_core::pipeline::ModelOutcome;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderSelector {
    Live,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Running,
    Done,
}

/// One submission. Holds no credentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryJob {
    pub job_id: String,
    pub dataset_id: DatasetId,
    pub query_text: String,
    pub models: Vec<ModelId>,
    pub provider: ProviderSelector,
    pub status: JobStatus,
    pub outcomes: Vec<ModelOutcome>,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
}

impl QueryJob {
    pub fn outcome(&self, wire_name: &str) -> Option<&ModelOutcome> {
        self.outcomes.iter().find(|o| o.model.wire_name == wire_name)
    }
}

/// In-memory job table, optionally mirrored to a directory as
/// `<job_id>.json` plus `<job_id>-<model>.png` per chart.
#[derive(Debug, Default)]
pub struct JobStore {
    jobs: RwLock<HashMap<String, QueryJob>>,
    next_id: AtomicU64,
    persist_dir: Option<PathBuf>,
}

impl JobStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn persisted_in(dir: impl Into<PathBuf>) -> Self {
        Self {
            persist_dir: Some(dir.into()),
            ..Self::default()
        }
    }

    pub fn create(
        &self,
        dataset_id: DatasetId,
        query_text: String,
        models: Vec<ModelId>,
        provider: ProviderSelector,
    ) -> QueryJob {
        let n = self.next_id.fetch_add(1, Ordering::Relaxed) + 1;
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let job = QueryJob {
            job_id: format!("job-{n}"),
            dataset_id,
            query_text,
            models,
            provider,
            status: JobStatus::Running,
            outcomes: Vec::new(),
            created_at,
        };
        self.jobs
            .write()
            .expect("job lock")
            .insert(job.job_id.clone(), job.clone());
        job
    }

    pub fn finish(&self, job_id: &str, outcomes: Vec<ModelOutcome>) {
        let finished = {
            let mut jobs = self.jobs.write().expect("job lock");
            let Some(job) = jobs.get_mut(job_id) else {
                return;
            };
            job.outcomes = outcomes;
            job.status = JobStatus::Done;
            job.clone()
        };
        if let Some(dir) = &self.persist_dir {
            if let Err(e) = persist(dir, &finished) {
                tracing::warn!(job = job_id, error = %e, "could not persist job");
            }
        }
    }

    pub fn get(&self, job_id: &str) -> Option<QueryJob> {
        self.jobs.read().expect("job lock").get(job_id).cloned()
    }
}

fn persist(dir: &Path, job: &QueryJob) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for outcome in &job.outcomes {
        if let Some(png) = outcome.chart_png() {
            let file = format!("{}-{}.png", job.job_id, outcome.model.wire_name);
            std::fs::write(dir.join(file), png)?;
        }
    }
    let json = serde_json::to_vec_pretty(job).map_err(std::io::Error::other)?;
    std::fs::write(dir.join(format!("{}.json", job.job_id)), json)
}
