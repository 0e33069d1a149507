//! Language-model gateway: request types, the provider abstraction, a live
//! OpenAI-compatible HTTP provider and an offline replay provider.

mod openai;
mod replay;
mod retry;

use std::fmt;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

pub use openai::{OpenAiProvider, DEFAULT_BASE_URL, DEFAULT_IN_FLIGHT};
pub use replay::{fixture_key, FixtureIndex, ReplayProvider, INDEX_FILE};
pub use retry::RetryPolicy;

pub const TEXT_DAVINCI_003: &str = "text-davinci-003";
pub const CODE_DAVINCI_002: &str = "code-davinci-002";
pub const DEFAULT_CHAT_MODEL: &str = "gpt-3.5-turbo";

pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 500;
pub const STOP_MARKER: &str = "plt.show()";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Completion,
    Chat,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelId {
    pub kind: ModelKind,
    pub wire_name: String,
}

impl ModelId {
    pub fn completion(wire_name: impl Into<String>) -> Self {
        Self {
            kind: ModelKind::Completion,
            wire_name: wire_name.into(),
        }
    }

    pub fn chat(wire_name: impl Into<String>) -> Self {
        Self {
            kind: ModelKind::Chat,
            wire_name: wire_name.into(),
        }
    }

    /// The two completion engines are recognised by name; anything else is
    /// treated as a chat model.
    pub fn from_wire_name(wire_name: &str) -> Self {
        match wire_name {
            TEXT_DAVINCI_003 | CODE_DAVINCI_002 => Self::completion(wire_name),
            other => Self::chat(other),
        }
    }

    /// GPT-3, Codex and the chat model, in that order.
    pub fn study_models() -> Vec<ModelId> {
        vec![
            Self::completion(TEXT_DAVINCI_003),
            Self::completion(CODE_DAVINCI_002),
            Self::chat(DEFAULT_CHAT_MODEL),
        ]
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.wire_name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: ModelId,
    pub prompt_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop: Vec<String>,
}

impl CompletionRequest {
    pub fn new(model: ModelId, prompt_text: impl Into<String>) -> Self {
        Self {
            model,
            prompt_text: prompt_text.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            stop: vec![STOP_MARKER.to_string()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

impl FinishReason {
    pub fn from_wire(reason: Option<&str>) -> Self {
        match reason {
            Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            _ => FinishReason::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub raw_text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
    pub provider_name: String,
}

impl CompletionResult {
    /// Empty text is only reported with [`FinishReason::Other`].
    pub fn new(
        raw_text: String,
        finish_reason: FinishReason,
        latency_ms: u64,
        provider_name: impl Into<String>,
    ) -> Self {
        let finish_reason = if raw_text.is_empty() {
            FinishReason::Other
        } else {
            finish_reason
        };
        Self {
            raw_text,
            finish_reason,
            latency_ms,
            provider_name: provider_name.into(),
        }
    }
}

/// Provider credential. Never printed, never serialized.
#[derive(Clone, PartialEq, Eq)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(<redacted>)")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProviderConfig {
    pub base_url: String,
    #[serde(skip)]
    pub api_key: ApiKey,
    pub timeout_s: u64,
    pub max_retries: u32,
}

impl ProviderConfig {
    pub fn new(api_key: ApiKey) -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.to_string(),
            api_key,
            timeout_s: 60,
            max_retries: RetryPolicy::default().max_retries,
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("prompt text is empty")]
    EmptyPrompt,
    #[error("provider rejected the credentials")]
    AuthFailed,
    #[error("rate limited by provider")]
    RateLimited,
    #[error("request timed out")]
    Timeout,
    #[error("prompt exceeds the model's context window")]
    ContextOverflow,
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("provider returned an unexpected response: {0}")]
    BadResponse(String),
    #[error("no recorded completion for model `{wire_name}` (key {key}); expected at {expected_path}")]
    FixtureMissing {
        wire_name: String,
        key: String,
        expected_path: String,
    },
    #[error("fixture store error: {0}")]
    FixtureStore(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            GatewayError::RateLimited | GatewayError::ProviderUnavailable(_)
        )
    }
}

#[async_trait]
pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    async fn send(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError>;
}

/// Submit a request after checking its precondition.
pub async fn complete(
    request: &CompletionRequest,
    provider: &dyn Provider,
) -> Result<CompletionResult, GatewayError> {
    if request.prompt_text.is_empty() {
        return Err(GatewayError::EmptyPrompt);
    }
    provider.send(request).await
}
