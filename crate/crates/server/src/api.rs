//! HTTP+JSON interface.
//!
//! | method | path                                   |                            |
//! |--------|----------------------------------------|----------------------------|
//! | GET    | `/datasets`                            | dataset summaries          |
//! | POST   | `/datasets?kind=csv\|sqlite&name=..`   | raw file body, 201 + ids   |
//! | GET    | `/datasets/{id}`                       | summary, profile, preview  |
//! | POST   | `/jobs`                                | submit a query, 202 + id   |
//! | GET    | `/jobs/{id}`                           | job with outcomes          |
//! | GET    | `/jobs/{id}/models/{model}/chart.png`  | raw chart bytes            |

use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use nl2vis_core::gateway::{
    ApiKey, ModelId, OpenAiProvider, Provider, ProviderConfig, ReplayProvider,
};
use nl2vis_core::ingest::{
    load_csv, load_path, load_sqlite, Cell, DatasetId, DatasetRegistry, IngestError, OriginKind,
    RegisteredDataset, SourceMeta,
};
use nl2vis_core::pipeline::{prepare, Pipeline};
use nl2vis_core::profile::{profile_table, SchemaProfile};
use nl2vis_core::prompt::PromptConfig;

use crate::jobs::{JobStore, ProviderSelector, QueryJob};

const PREVIEW_ROWS: usize = 10;
const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;

/// Settings for live provider calls. A key given with a submission wins over
/// the configured one.
#[derive(Debug, Clone, Default)]
pub struct LiveSettings {
    pub base_url: Option<String>,
    pub api_key: Option<ApiKey>,
}

pub struct AppState {
    pub registry: DatasetRegistry,
    pub jobs: JobStore,
    pub pipeline: Pipeline,
    pub replay: Option<Arc<ReplayProvider>>,
    pub live: LiveSettings,
}

impl AppState {
    pub fn new(pipeline: Pipeline) -> Self {
        Self {
            registry: DatasetRegistry::new(),
            jobs: JobStore::new(),
            pipeline,
            replay: None,
            live: LiveSettings::default(),
        }
    }
}

/// Register every `.csv` and `.sqlite` file in `dir`, in file-name order.
pub fn load_builtin(registry: &DatasetRegistry, dir: &Path) -> Result<usize, IngestError> {
    let entries = std::fs::read_dir(dir).map_err(|e| IngestError::UnreadableFile {
        path: dir.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut paths: Vec<_> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("csv" | "sqlite")
            )
        })
        .collect();
    paths.sort();
    let mut count = 0;
    for path in paths {
        let origin = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        for frame in load_path(&path)? {
            registry.register(frame, SourceMeta::now(OriginKind::Builtin, origin.clone()));
            count += 1;
        }
    }
    Ok(count)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/datasets", get(list_datasets).post(upload_dataset))
        .route("/datasets/:id", get(get_dataset))
        .route("/jobs", axum::routing::post(submit_job))
        .route("/jobs/:id", get(get_job))
        .route("/jobs/:id/models/:model/chart.png", get(get_chart))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }
}

impl From<IngestError> for ApiError {
    fn from(err: IngestError) -> Self {
        let (status, code) = match &err {
            IngestError::NotFound(_) => (StatusCode::NOT_FOUND, "unknown_dataset"),
            IngestError::UnreadableFile { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
            _ => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_dataset"),
        };
        Self::new(status, code, err.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(json!({"error": self.code, "message": self.message}));
        (self.status, body).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub id: DatasetId,
    pub name: String,
    pub columns: Vec<String>,
    pub row_count: usize,
    pub origin: SourceMeta,
}

impl From<&RegisteredDataset> for DatasetSummary {
    fn from(entry: &RegisteredDataset) -> Self {
        Self {
            id: entry.id.clone(),
            name: entry.frame.name().to_string(),
            columns: entry.frame.column_names().map(str::to_string).collect(),
            row_count: entry.frame.row_count(),
            origin: entry.meta.clone(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetDetail {
    #[serde(flatten)]
    pub summary: DatasetSummary,
    pub profile: SchemaProfile,
    pub preview: Vec<Vec<Cell>>,
}

async fn list_datasets(State(state): State<Arc<AppState>>) -> Json<Vec<DatasetSummary>> {
    Json(
        state
            .registry
            .list()
            .iter()
            .map(|e| DatasetSummary::from(e.as_ref()))
            .collect(),
    )
}

async fn get_dataset(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<DatasetDetail>, ApiError> {
    let entry = state.registry.get(&DatasetId::from(id.as_str()))?;
    let frame = &entry.frame;
    let preview = (0..frame.row_count().min(PREVIEW_ROWS))
        .filter_map(|i| frame.row(i))
        .map(|row| row.into_iter().cloned().collect())
        .collect();
    Ok(Json(DatasetDetail {
        summary: DatasetSummary::from(entry.as_ref()),
        profile: profile_table(frame, PromptConfig::default().categorical_threshold),
        preview,
    }))
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
enum UploadKind {
    Csv,
    Sqlite,
}

#[derive(Debug, Deserialize)]
struct UploadParams {
    kind: UploadKind,
    name: Option<String>,
}

async fn upload_dataset(
    State(state): State<Arc<AppState>>,
    Query(params): Query<UploadParams>,
    body: Bytes,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    if body.is_empty() {
        return Err(IngestError::EmptyInput.into());
    }
    let (frames, origin_kind) = match params.kind {
        UploadKind::Csv => {
            let name = params.name.as_deref().unwrap_or("upload");
            (vec![load_csv(&body, name)?], OriginKind::Csv)
        }
        UploadKind::Sqlite => {
            let file = tempfile::NamedTempFile::new().map_err(|e| {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io", e.to_string())
            })?;
            std::fs::write(file.path(), &body).map_err(|e| {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io", e.to_string())
            })?;
            (load_sqlite(file.path())?, OriginKind::Sqlite)
        }
    };
    let origin_name = params.name.unwrap_or_else(|| "upload".to_string());
    let ids: Vec<DatasetId> = frames
        .into_iter()
        .map(|frame| {
            state
                .registry
                .register(frame, SourceMeta::now(origin_kind, origin_name.clone()))
        })
        .collect();
    Ok((StatusCode::CREATED, Json(json!({"dataset_ids": ids}))))
}

#[derive(Debug, Deserialize)]
pub struct SubmitJob {
    pub dataset_id: DatasetId,
    pub query: String,
    /// Wire names, e.g. `text-davinci-003`.
    pub models: Vec<String>,
    pub provider: ProviderSelector,
    #[serde(default)]
    pub api_key: Option<String>,
}

async fn submit_job(
    State(state): State<Arc<AppState>>,
    Json(request): Json<SubmitJob>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let entry = state.registry.get(&request.dataset_id)?;
    if request.query.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "empty_query",
            "query text is empty",
        ));
    }
    if request.models.is_empty() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "no_models",
            "select at least one model",
        ));
    }

    let provider: Arc<dyn Provider> = match request.provider {
        ProviderSelector::Replay => match &state.replay {
            Some(replay) => replay.clone(),
            None => {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "replay_unavailable",
                    "server started without a fixture store",
                ))
            }
        },
        ProviderSelector::Live => {
            let key = request
                .api_key
                .map(ApiKey::new)
                .or_else(|| state.live.api_key.clone())
                .ok_or_else(|| {
                    ApiError::new(
                        StatusCode::UNPROCESSABLE_ENTITY,
                        "missing_api_key",
                        "live mode needs an API key",
                    )
                })?;
            let mut config = ProviderConfig::new(key);
            if let Some(url) = &state.live.base_url {
                config.base_url = url.clone();
            }
            let live = OpenAiProvider::new(config).map_err(|e| {
                ApiError::new(StatusCode::BAD_GATEWAY, "provider", e.to_string())
            })?;
            Arc::new(live)
        }
    };

    let frame = entry.frame.clone();
    let prepared = prepare(&frame, &request.query, PromptConfig::for_frame(frame.name()))
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_query", e.to_string()))?;
    let models: Vec<ModelId> = request
        .models
        .iter()
        .map(|m| ModelId::from_wire_name(m))
        .collect();
    let job = state.jobs.create(
        request.dataset_id,
        request.query,
        models.clone(),
        request.provider,
    );

    let job_id = job.job_id.clone();
    let task_state = state.clone();
    tokio::spawn(async move {
        let execute = task_state.pipeline.has_sandbox();
        let outcomes = task_state
            .pipeline
            .run_models(&prepared, &models, provider.as_ref(), execute)
            .await;
        task_state.jobs.finish(&job_id, outcomes);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({"job_id": job.job_id}))))
}

async fn get_job(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<QueryJob>, ApiError> {
    state
        .jobs
        .get(&id)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_job", format!("no job `{id}`")))
}

async fn get_chart(
    State(state): State<Arc<AppState>>,
    UrlPath((id, model)): UrlPath<(String, String)>,
) -> Result<Response, ApiError> {
    let job = state
        .jobs
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_job", format!("no job `{id}`")))?;
    let png = job
        .outcome(&model)
        .and_then(|o| o.chart_png())
        .ok_or_else(|| {
            ApiError::new(
                StatusCode::NOT_FOUND,
                "no_chart",
                format!("job `{id}` has no chart for `{model}`"),
            )
        })?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png.to_vec()).into_response())
}
