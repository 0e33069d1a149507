//! Command-line front end: one-shot runs, the HTTP service and the case
//! harness.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nl2vis_core::gateway::{ApiKey, ModelId, OpenAiProvider, Provider, ProviderConfig, ReplayProvider};
use nl2vis_core::harness::Harness;
use nl2vis_core::ingest::{load_path, TableFrame};
use nl2vis_core::pipeline::{prepare, Pipeline};
use nl2vis_core::prompt::PromptConfig;
use nl2vis_core::sandbox::SandboxRunner;

use crate::api::{self, AppState, LiveSettings};
use crate::jobs::JobStore;

pub const EXIT_PIPELINE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "nl2vis", version, about = "Turn plain-language questions about a table into charts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one query against one model and write the artifacts to a directory.
    Run(RunArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Replay the recorded case studies and report structural checks.
    Cases(CasesArgs),
    /// Rebuild the fixture index after a deliberate prompt change.
    Reindex(StoreArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderArg {
    Replay,
    Live,
}

#[derive(Debug, Args)]
pub struct LiveArgs {
    #[arg(long, env = "OPENAI_API_KEY", hide_env_values = true)]
    pub api_key: Option<String>,
    #[arg(long, env = "OPENAI_BASE_URL")]
    pub base_url: Option<String>,
}

#[derive(Debug, Args)]
pub struct StoreArgs {
    #[arg(long, env = "NL2VIS_FIXTURES", default_value = "fixtures")]
    pub fixtures: PathBuf,
    #[arg(long, env = "NL2VIS_DATA", default_value = "data")]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// CSV file or SQLite database.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Table to use when the database has several.
    #[arg(long)]
    pub table: Option<String>,
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value = "text-davinci-003")]
    pub model: String,
    #[arg(long, value_enum, default_value = "replay")]
    pub provider: ProviderArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Stop after sanitizing; no chart.png is written.
    #[arg(long)]
    pub no_exec: bool,
    #[arg(long, env = "NL2VIS_FIXTURES", default_value = "fixtures")]
    pub fixtures: PathBuf,
    /// Script runner command line, e.g. `python3 runner.py`.
    #[arg(long, env = "NL2VIS_RUNNER")]
    pub runner: Option<String>,
    #[arg(long, default_value_t = nl2vis_core::sandbox::DEFAULT_TIMEOUT_S)]
    pub timeout: u64,
    #[command(flatten)]
    pub live: LiveArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long, env = "NL2VIS_DATA", default_value = "data")]
    pub data: PathBuf,
    /// Fixture store for replay-mode jobs.
    #[arg(long, env = "NL2VIS_FIXTURES")]
    pub fixtures: Option<PathBuf>,
    #[arg(long, env = "NL2VIS_RUNNER")]
    pub runner: Option<String>,
    /// Also write finished jobs and charts here.
    #[arg(long)]
    pub jobs_dir: Option<PathBuf>,
    #[command(flatten)]
    pub live: LiveArgs,
}

#[derive(Debug, Args)]
pub struct CasesArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    /// Execute the scripts and check the charts too.
    #[arg(long)]
    pub exec: bool,
    #[arg(long, env = "NL2VIS_RUNNER")]
    pub runner: Option<String>,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

fn usage(message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(EXIT_USAGE)
}

fn failure(message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(EXIT_PIPELINE)
}

fn runner(command: Option<&str>) -> Option<SandboxRunner> {
    command.and_then(SandboxRunner::from_command_line)
}

pub async fn dispatch(cli: Cli) -> ExitCode {
    match cli.command {
        Command::Run(args) => run(args).await,
        Command::Serve(args) => serve(args).await,
        Command::Cases(args) => cases(args).await,
        Command::Reindex(args) => match Harness::new(&args.fixtures, &args.data).reindex() {
            Ok(index) => {
                println!("indexed {} recorded completions", index.len());
                ExitCode::SUCCESS
            }
            Err(e) => failure(e),
        },
    }
}

fn pick_table(frames: Vec<TableFrame>, table: Option<&str>) -> Result<TableFrame, String> {
    let names: Vec<String> = frames.iter().map(|f| f.name().to_string()).collect();
    match table {
        Some(wanted) => frames
            .into_iter()
            .find(|f| f.name() == wanted)
            .ok_or_else(|| format!("no table `{wanted}`; available: {}", names.join(", "))),
        None if frames.len() == 1 => Ok(frames.into_iter().next().expect("one frame")),
        None if frames.is_empty() => Err("dataset contains no tables".into()),
        None => Err(format!(
            "dataset has several tables, pick one with --table: {}",
            names.join(", ")
        )),
    }
}

fn write_artifact(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), String> {
    std::fs::write(dir.join(name), bytes).map_err(|e| format!("{}: {e}", dir.join(name).display()))
}

pub async fn run(args: RunArgs) -> ExitCode {
    if !args.dataset.is_file() {
        return usage(format!("dataset `{}` not found", args.dataset.display()));
    }
    let frames = match load_path(&args.dataset) {
        Ok(frames) => frames,
        Err(e) => return failure(e),
    };
    let frame = match pick_table(frames, args.table.as_deref()) {
        Ok(frame) => frame,
        Err(e) => return usage(e),
    };
    let prepared = match prepare(&frame, &args.query, PromptConfig::for_frame(frame.name())) {
        Ok(p) => p,
        Err(e) => return usage(e),
    };

    let provider: Box<dyn Provider> = match args.provider {
        ProviderArg::Replay => match ReplayProvider::open(&args.fixtures) {
            Ok(p) => Box::new(p),
            Err(e) => return usage(e),
        },
        ProviderArg::Live => {
            let Some(key) = args.live.api_key else {
                return usage("live provider needs --api-key or OPENAI_API_KEY");
            };
            let mut config = ProviderConfig::new(ApiKey::new(key));
            if let Some(url) = args.live.base_url {
                config.base_url = url;
            }
            match OpenAiProvider::new(config) {
                Ok(p) => Box::new(p),
                Err(e) => return failure(e),
            }
        }
    };

    let mut pipeline = Pipeline::default().with_exec_timeout(args.timeout);
    if !args.no_exec {
        match runner(args.runner.as_deref()) {
            Some(r) => pipeline = pipeline.with_sandbox(r),
            None => return usage("no script runner configured; pass --runner or --no-exec"),
        }
    }

    if let Err(e) = std::fs::create_dir_all(&args.out) {
        return usage(format!("{}: {e}", args.out.display()));
    }
    let model = ModelId::from_wire_name(&args.model);
    let outcome = pipeline
        .run_model(&prepared, &model, provider.as_ref(), !args.no_exec)
        .await;

    let mut artifacts: Vec<(&str, &[u8])> = vec![("prompt.txt", outcome.prompt_full_text.as_bytes())];
    if let Some(raw) = &outcome.raw_completion {
        artifacts.push(("raw.txt", raw.as_bytes()));
    }
    if let Some(script) = &outcome.sanitized_script {
        artifacts.push(("script.txt", script.as_bytes()));
    }
    if let Some(png) = outcome.chart_png() {
        artifacts.push(("chart.png", png));
    }
    for (name, bytes) in artifacts {
        if let Err(e) = write_artifact(&args.out, name, bytes) {
            return failure(e);
        }
    }

    if let Some(reason) = &outcome.denied {
        return failure(format!(
            "script denied ({}): {}",
            reason.category, reason.matched_text
        ));
    }
    match &outcome.error {
        Some(e) => failure(format!("{} failed: {}", e.stage, e.message)),
        None => ExitCode::SUCCESS,
    }
}

pub async fn serve(args: ServeArgs) -> ExitCode {
    let mut pipeline = Pipeline::default();
    if let Some(r) = runner(args.runner.as_deref()) {
        pipeline = pipeline.with_sandbox(r);
    } else {
        tracing::warn!("no script runner configured; jobs stop after sanitizing");
    }
    let mut state = AppState::new(pipeline);
    if let Some(dir) = args.jobs_dir {
        state.jobs = JobStore::persisted_in(dir);
    }
    if let Some(root) = &args.fixtures {
        match ReplayProvider::open(root) {
            Ok(p) => state.replay = Some(Arc::new(p)),
            Err(e) => return usage(e),
        }
    }
    state.live = LiveSettings {
        base_url: args.live.base_url,
        api_key: args.live.api_key.map(ApiKey::new),
    };
    match api::load_builtin(&state.registry, &args.data) {
        Ok(n) => tracing::info!(count = n, dir = %args.data.display(), "loaded built-in datasets"),
        Err(e) => tracing::warn!(error = %e, "no built-in datasets"),
    }

    let listener = match tokio::net::TcpListener::bind(args.addr).await {
        Ok(l) => l,
        Err(e) => return usage(format!("cannot bind {}: {e}", args.addr)),
    };
    tracing::info!(addr = %args.addr, "listening");
    match axum::serve(listener, api::router(Arc::new(state))).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => failure(e),
    }
}

pub async fn cases(args: CasesArgs) -> ExitCode {
    let mut pipeline = Pipeline::default();
    if args.exec {
        match runner(args.runner.as_deref()) {
            Some(r) => pipeline = pipeline.with_sandbox(r),
            None => return usage("--exec needs --runner or NL2VIS_RUNNER"),
        }
    }
    let harness = Harness::new(&args.store.fixtures, &args.store.data).with_pipeline(pipeline);
    let report = match harness.run_all(args.exec).await {
        Ok(r) => r,
        Err(e) => return failure(e),
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        println!("{report}");
    }
    if report.is_success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_PIPELINE)
    }
}
