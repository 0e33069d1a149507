//! Client for the out-of-process script runner.
//!
//! The runner is any executable speaking a one-shot JSON protocol: a single
//! request line on stdin `{script, csv_b64, alias, timeout_s}` and a single
//! response line on stdout `{status, png_b64?, stderr_tail, duration_ms}`,
//! exiting 0 whenever the protocol itself succeeded. Each execution gets a
//! fresh private working directory and a minimal environment.

use std::io::Cursor;
use std::path::PathBuf;
use std::process::Stdio;
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use tokio::io::AsyncWriteExt;
use tokio::sync::Semaphore;

pub const DEFAULT_TIMEOUT_S: u64 = 30;
pub const DEFAULT_CONCURRENCY: usize = 3;
pub const STDERR_TAIL_BYTES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    ScriptError,
    Timeout,
    Denied,
    HarnessError,
}

#[derive(Debug, Clone)]
pub struct ExecutionRequest {
    pub script_text: String,
    pub dataset_csv: Vec<u8>,
    /// Variable the runner binds the loaded dataset to.
    pub frame_alias: String,
    pub timeout_s: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    #[serde(
        rename = "png_b64",
        default,
        skip_serializing_if = "Option::is_none",
        with = "b64_opt"
    )]
    pub image_png: Option<Vec<u8>>,
    pub stderr_tail: String,
    pub duration_ms: u64,
}

impl ExecutionResult {
    fn failure(status: ExecStatus, message: impl AsRef<str>, duration_ms: u64) -> Self {
        Self {
            status,
            image_png: None,
            stderr_tail: tail(message.as_ref()),
            duration_ms,
        }
    }

    pub fn denied(reason: impl AsRef<str>) -> Self {
        Self::failure(ExecStatus::Denied, reason, 0)
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }
}

mod b64_opt {
    use super::B64;
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(bytes) => s.serialize_str(&B64.encode(bytes)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        let raw: Option<String> = Option::deserialize(d)?;
        raw.map(|s| B64.decode(s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    script: &'a str,
    csv_b64: String,
    alias: &'a str,
    timeout_s: u64,
}

#[derive(Deserialize)]
struct WireResponse {
    status: ExecStatus,
    #[serde(default)]
    png_b64: Option<String>,
    #[serde(default)]
    stderr_tail: String,
    #[serde(default)]
    duration_ms: Option<u64>,
}

/// Last [`STDERR_TAIL_BYTES`] bytes, cut on a character boundary.
pub fn tail(text: &str) -> String {
    if text.len() <= STDERR_TAIL_BYTES {
        return text.to_string();
    }
    let mut start = text.len() - STDERR_TAIL_BYTES;
    while !text.is_char_boundary(start) {
        start += 1;
    }
    text[start..].to_string()
}

/// Width and height of a PNG, or `None` if it does not decode.
pub fn png_dimensions(bytes: &[u8]) -> Option<(u32, u32)> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let reader = decoder.read_info().ok()?;
    let info = reader.info();
    (info.width > 0 && info.height > 0).then_some((info.width, info.height))
}

/// Spawns the runner command once per execution.
#[derive(Debug, Clone)]
pub struct SandboxRunner {
    program: PathBuf,
    args: Vec<String>,
    grace: Duration,
    slots: Arc<Semaphore>,
}

impl SandboxRunner {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
            grace: Duration::from_secs(2),
            slots: Arc::new(Semaphore::new(DEFAULT_CONCURRENCY)),
        }
    }

    /// Split a whitespace-separated command line, e.g. `python3 runner.py`.
    pub fn from_command_line(command: &str) -> Option<Self> {
        let mut parts = command.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        Some(Self::new(program, parts.collect()))
    }

    pub fn with_concurrency(mut self, limit: usize) -> Self {
        self.slots = Arc::new(Semaphore::new(limit.max(1)));
        self
    }

    /// Extra wall-clock allowance past the request timeout before the client
    /// kills the runner itself.
    pub fn with_grace(mut self, grace: Duration) -> Self {
        self.grace = grace;
        self
    }

    pub async fn execute(&self, request: &ExecutionRequest) -> ExecutionResult {
        let started = Instant::now();
        let elapsed = || started.elapsed().as_millis() as u64;
        let _slot = match self.slots.acquire().await {
            Ok(slot) => slot,
            Err(_) => return ExecutionResult::failure(ExecStatus::HarnessError, "runner pool closed", 0),
        };

        let workdir = match tempfile::Builder::new().prefix("nl2vis-run-").tempdir() {
            Ok(dir) => dir,
            Err(e) => {
                return ExecutionResult::failure(
                    ExecStatus::HarnessError,
                    format!("cannot create workdir: {e}"),
                    elapsed(),
                )
            }
        };

        let mut command = tokio::process::Command::new(&self.program);
        command
            .args(&self.args)
            .current_dir(workdir.path())
            .env_clear()
            .env("HOME", workdir.path())
            .env("TMPDIR", workdir.path())
            .env("MPLCONFIGDIR", workdir.path())
            .env("MPLBACKEND", "Agg")
            .env("LANG", "C.UTF-8")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .kill_on_drop(true);
        if let Some(path) = std::env::var_os("PATH") {
            command.env("PATH", path);
        }

        let mut child = match command.spawn() {
            Ok(child) => child,
            Err(e) => {
                return ExecutionResult::failure(
                    ExecStatus::HarnessError,
                    format!("cannot start runner `{}`: {e}", self.program.display()),
                    elapsed(),
                )
            }
        };

        let payload = serde_json::to_string(&WireRequest {
            script: &request.script_text,
            csv_b64: B64.encode(&request.dataset_csv),
            alias: &request.frame_alias,
            timeout_s: request.timeout_s,
        })
        .expect("request serializes");
        if let Some(mut stdin) = child.stdin.take() {
            tokio::spawn(async move {
                let _ = stdin.write_all(payload.as_bytes()).await;
                let _ = stdin.write_all(b"\n").await;
            });
        }

        let limit = Duration::from_secs(request.timeout_s) + self.grace;
        let output = match tokio::time::timeout(limit, child.wait_with_output()).await {
            Ok(Ok(output)) => output,
            Ok(Err(e)) => {
                return ExecutionResult::failure(ExecStatus::HarnessError, e.to_string(), elapsed())
            }
            Err(_) => {
                return ExecutionResult::failure(
                    ExecStatus::Timeout,
                    format!("killed after {}s", limit.as_secs()),
                    elapsed(),
                )
            }
        };

        let runner_stderr = String::from_utf8_lossy(&output.stderr);
        let stdout = String::from_utf8_lossy(&output.stdout);
        let Some(line) = stdout.lines().rev().find(|l| !l.trim().is_empty()) else {
            return ExecutionResult::failure(
                ExecStatus::HarnessError,
                format!("runner exited with {} and no response\n{runner_stderr}", output.status),
                elapsed(),
            );
        };
        let response: WireResponse = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                return ExecutionResult::failure(
                    ExecStatus::HarnessError,
                    format!("malformed runner response: {e}\n{runner_stderr}"),
                    elapsed(),
                )
            }
        };
        let duration_ms = response.duration_ms.unwrap_or_else(elapsed);

        if response.status != ExecStatus::Ok {
            return ExecutionResult::failure(response.status, response.stderr_tail, duration_ms);
        }
        let image = response
            .png_b64
            .as_deref()
            .and_then(|b| B64.decode(b).ok())
            .filter(|bytes| png_dimensions(bytes).is_some());
        match image {
            Some(png) => ExecutionResult {
                status: ExecStatus::Ok,
                image_png: Some(png),
                stderr_tail: tail(&response.stderr_tail),
                duration_ms,
            },
            None => ExecutionResult::failure(
                ExecStatus::HarnessError,
                format!("runner reported ok without a valid PNG\n{}", response.stderr_tail),
                duration_ms,
            ),
        }
    }
}
