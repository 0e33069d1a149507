//! Per-model orchestration: profile, prompt, complete, sanitize, execute.
//!
//! Each model's run is independent. Failures are recorded in its
//! [`ModelOutcome`] instead of aborting the others.

use std::fmt;
use std::sync::Arc;

use futures::future::join_all;
use serde::{Deserialize, Serialize};

use crate::gateway::{complete, CompletionRequest, ModelId, Provider};
use crate::ingest::TableFrame;
use crate::profile::{profile_table, SchemaProfile};
use crate::prompt::{engineer, EngineeredPrompt, PromptConfig, PromptError};
use crate::sandbox::{ExecutionRequest, ExecutionResult, SandboxRunner, DEFAULT_TIMEOUT_S};
use crate::sanitize::{sanitize, DenialReason, DenyPolicy, SanitizeOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Complete,
    Sanitize,
    Execute,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Complete => "complete",
            Stage::Sanitize => "sanitize",
            Stage::Execute => "execute",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutcome {
    pub model: ModelId,
    pub prompt_full_text: String,
    pub raw_completion: Option<String>,
    pub sanitized_script: Option<String>,
    pub denied: Option<DenialReason>,
    pub execution: Option<ExecutionResult>,
    pub error: Option<StageError>,
}

impl ModelOutcome {
    fn new(model: ModelId, prompt: &EngineeredPrompt) -> Self {
        Self {
            model,
            prompt_full_text: prompt.full_text.clone(),
            raw_completion: None,
            sanitized_script: None,
            denied: None,
            execution: None,
            error: None,
        }
    }

    fn fail(mut self, stage: Stage, message: impl fmt::Display) -> Self {
        self.error = Some(StageError {
            stage,
            message: message.to_string(),
        });
        self
    }

    pub fn chart_png(&self) -> Option<&[u8]> {
        self.execution.as_ref()?.image_png.as_deref()
    }
}

/// Everything derived from the dataset and query before any model is asked.
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    pub config: PromptConfig,
    pub profile: SchemaProfile,
    pub prompt: EngineeredPrompt,
    pub dataset_csv: Arc<Vec<u8>>,
}

pub fn prepare(
    frame: &TableFrame,
    query: &str,
    config: PromptConfig,
) -> Result<PreparedQuery, PromptError> {
    let profile = profile_table(frame, config.categorical_threshold);
    let prompt = engineer(&profile, query, &config)?;
    Ok(PreparedQuery {
        config,
        profile,
        prompt,
        dataset_csv: Arc::new(frame.to_csv()),
    })
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    policy: Arc<DenyPolicy>,
    sandbox: Option<SandboxRunner>,
    exec_timeout_s: u64,
}

impl Default for Pipeline {
    fn default() -> Self {
        Self::new(DenyPolicy::default())
    }
}

impl Pipeline {
    pub fn new(policy: DenyPolicy) -> Self {
        Self {
            policy: Arc::new(policy),
            sandbox: None,
            exec_timeout_s: DEFAULT_TIMEOUT_S,
        }
    }

    pub fn with_sandbox(mut self, runner: SandboxRunner) -> Self {
        self.sandbox = Some(runner);
        self
    }

    pub fn with_exec_timeout(mut self, timeout_s: u64) -> Self {
        self.exec_timeout_s = timeout_s;
        self
    }

    pub fn has_sandbox(&self) -> bool {
        self.sandbox.is_some()
    }

    /// Complete and sanitize for one model; execute too when `execute` is
    /// set and a runner is configured.
    pub async fn run_model(
        &self,
        prepared: &PreparedQuery,
        model: &ModelId,
        provider: &dyn Provider,
        execute: bool,
    ) -> ModelOutcome {
        let outcome = ModelOutcome::new(model.clone(), &prepared.prompt);
        let request = CompletionRequest::new(model.clone(), prepared.prompt.full_text.clone());
        let completion = match complete(&request, provider).await {
            Ok(c) => c,
            Err(e) => return outcome.fail(Stage::Complete, e),
        };
        let mut outcome = ModelOutcome {
            raw_completion: Some(completion.raw_text),
            ..outcome
        };

        let options = SanitizeOptions {
            code_prompt: &prepared.prompt.code,
            expected_file_name: &prepared.config.expected_file_name,
            stop: &request.stop,
            policy: &self.policy,
        };
        let raw = outcome.raw_completion.as_deref().unwrap_or_default();
        let script = match sanitize(raw, model.kind, &options) {
            Ok(s) => s,
            Err(e) => return outcome.fail(Stage::Sanitize, e),
        };
        outcome.sanitized_script = Some(script.text.clone());

        if let Some(reason) = script.denied {
            outcome.execution = Some(ExecutionResult::denied(format!(
                "{}: {}",
                reason.category, reason.matched_text
            )));
            outcome.denied = Some(reason);
            return outcome;
        }

        match (&self.sandbox, execute) {
            (Some(runner), true) => {
                let result = runner
                    .execute(&ExecutionRequest {
                        script_text: script.text,
                        dataset_csv: prepared.dataset_csv.to_vec(),
                        frame_alias: prepared.config.source_frame.clone(),
                        timeout_s: self.exec_timeout_s,
                    })
                    .await;
                let failed = !result.is_ok();
                let message = format!("{:?}: {}", result.status, result.stderr_tail.trim());
                outcome.execution = Some(result);
                if failed {
                    outcome.fail(Stage::Execute, message)
                } else {
                    outcome
                }
            }
            (None, true) => outcome.fail(Stage::Execute, "no script runner configured"),
            (_, false) => outcome,
        }
    }

    /// All models concurrently; outcomes come back in request order.
    pub async fn run_models(
        &self,
        prepared: &PreparedQuery,
        models: &[ModelId],
        provider: &dyn Provider,
        execute: bool,
    ) -> Vec<ModelOutcome> {
        join_all(
            models
                .iter()
                .map(|m| self.run_model(prepared, m, provider, execute)),
        )
        .await
    }
}
