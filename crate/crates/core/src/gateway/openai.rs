//! OpenAI-compatible HTTP provider for the completion and chat endpoints.

use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use super::{
    CompletionRequest, CompletionResult, FinishReason, GatewayError, ModelKind, Provider,
    ProviderConfig, RetryPolicy,
};

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_IN_FLIGHT: usize = 4;

pub struct OpenAiProvider {
    client: reqwest::Client,
    config: ProviderConfig,
    retry: RetryPolicy,
    in_flight: Arc<Semaphore>,
}

impl OpenAiProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, GatewayError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s.max(1)))
            .build()
            .map_err(|e| GatewayError::ProviderUnavailable(e.to_string()))?;
        let retry = RetryPolicy {
            max_retries: config.max_retries,
            ..RetryPolicy::default()
        };
        Ok(Self {
            client,
            config,
            retry,
            in_flight: Arc::new(Semaphore::new(DEFAULT_IN_FLIGHT)),
        })
    }

    pub fn with_retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_in_flight_limit(mut self, limit: usize) -> Self {
        self.in_flight = Arc::new(Semaphore::new(limit.max(1)));
        self
    }

    fn endpoint(&self, kind: ModelKind) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        match kind {
            ModelKind::Completion => format!("{base}/completions"),
            ModelKind::Chat => format!("{base}/chat/completions"),
        }
    }

    /// Chat requests carry the whole prompt as one user message and no stop
    /// list; the sanitizer truncates at the marker instead.
    fn body(request: &CompletionRequest) -> Value {
        match request.model.kind {
            ModelKind::Completion => json!({
                "model": request.model.wire_name,
                "prompt": request.prompt_text,
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
                "stop": request.stop,
            }),
            ModelKind::Chat => json!({
                "model": request.model.wire_name,
                "messages": [{"role": "user", "content": request.prompt_text}],
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
            }),
        }
    }

    async fn send_once(&self, request: &CompletionRequest) -> Result<(String, FinishReason), GatewayError> {
        let response = self
            .client
            .post(self.endpoint(request.model.kind))
            .bearer_auth(self.config.api_key.expose())
            .json(&Self::body(request))
            .send()
            .await
            .map_err(transport_error)?;

        let status = response.status();
        let body = response.text().await.map_err(transport_error)?;
        if !status.is_success() {
            return Err(classify_failure(status.as_u16(), &body));
        }
        parse_success(request.model.kind, &body)
    }
}

#[async_trait]
impl Provider for OpenAiProvider {
    fn name(&self) -> &str {
        "openai"
    }

    async fn send(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        let _permit = self
            .in_flight
            .acquire()
            .await
            .map_err(|_| GatewayError::ProviderUnavailable("provider shut down".into()))?;
        let started = Instant::now();
        let (text, reason) = self.retry.run(|| self.send_once(request)).await?;
        Ok(CompletionResult::new(
            text,
            reason,
            started.elapsed().as_millis() as u64,
            self.name(),
        ))
    }
}

fn transport_error(err: reqwest::Error) -> GatewayError {
    if err.is_timeout() {
        GatewayError::Timeout
    } else {
        GatewayError::ProviderUnavailable(err.without_url().to_string())
    }
}

#[derive(Deserialize)]
struct ErrorEnvelope {
    error: Option<ErrorBody>,
}

#[derive(Deserialize)]
struct ErrorBody {
    message: Option<String>,
    code: Option<Value>,
}

fn classify_failure(status: u16, body: &str) -> GatewayError {
    let detail = serde_json::from_str::<ErrorEnvelope>(body)
        .ok()
        .and_then(|e| e.error);
    let code = detail
        .as_ref()
        .and_then(|d| d.code.as_ref())
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let message = detail
        .and_then(|d| d.message)
        .unwrap_or_else(|| format!("HTTP {status}"));

    match status {
        401 | 403 => GatewayError::AuthFailed,
        429 => GatewayError::RateLimited,
        400 | 413
            if code == "context_length_exceeded" || message.contains("maximum context length") =>
        {
            GatewayError::ContextOverflow
        }
        408 | 500..=599 => GatewayError::ProviderUnavailable(message),
        _ => GatewayError::BadResponse(format!("HTTP {status}: {message}")),
    }
}

fn parse_success(kind: ModelKind, body: &str) -> Result<(String, FinishReason), GatewayError> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| GatewayError::BadResponse(e.to_string()))?;
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::BadResponse("response has no choices".into()))?;
    let text = match kind {
        ModelKind::Completion => choice.get("text"),
        ModelKind::Chat => choice.get("message").and_then(|m| m.get("content")),
    }
    .and_then(Value::as_str)
    .unwrap_or_default()
    .to_string();
    let reason = FinishReason::from_wire(choice.get("finish_reason").and_then(Value::as_str));
    Ok((text, reason))
}
