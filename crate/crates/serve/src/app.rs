use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use lesionpipe::data::{resize_bilinear, DatasetManifest, ExpectedShape, PixelImage, SampleRecord};
use lesionpipe::pipeline::{
    new_run_id, run_pipeline_as, triggers_with, FeedbackRecord, FeedbackStore, PipelineError, PipelineRunReport, StageName,
    Trigger, Verdict, Workspace,
};
use lesionpipe::Label;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::config::AppConfig;
use crate::model::{EvalSummary, ModelSlot, ModelSnapshot};
use crate::requests::{new_request_id, LoggedRequest, RequestLog};

pub const TOKEN_HEADER: &str = "x-lesionpipe-token";

/// Outcome of the most recent pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub completed: bool,
    pub aborted_at: Option<StageName>,
    pub promoted: bool,
    pub candidate_version: Option<u64>,
    pub finished_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl From<&PipelineRunReport> for RunSummary {
    fn from(r: &PipelineRunReport) -> Self {
        Self {
            run_id: r.run_id.clone(),
            completed: r.completed,
            aborted_at: r.aborted_at,
            promoted: r.promoted,
            candidate_version: r.candidate_version,
            finished_at: Some(r.finished_at),
            error: None,
        }
    }
}

pub struct AppState {
    pub config: AppConfig,
    pub model: ModelSlot,
    requests: Mutex<RequestLog>,
    feedback: Mutex<FeedbackStore>,
    run_active: AtomicBool,
    last_run: Mutex<Option<RunSummary>>,
}

impl AppState {
    /// Opens the workspace feedback log and loads the production model, if any.
    pub fn open(config: AppConfig) -> anyhow::Result<Self> {
        config.pipeline.validate()?;
        let ws = Workspace::new(&config.pipeline.data_dir);
        let feedback = FeedbackStore::open(&ws.feedback())?;
        let state = Self {
            model: ModelSlot::default(),
            requests: Mutex::new(RequestLog::new(config.serve.request_log_capacity)),
            feedback: Mutex::new(feedback),
            run_active: AtomicBool::new(false),
            last_run: Mutex::new(None),
            config,
        };
        if let Some(version) = ws.registry()?.production()? {
            let snapshot = ModelSnapshot::from_version(&version, state.config.pipeline.training.norm)?;
            state.model.hot_swap(snapshot).map_err(anyhow::Error::msg)?;
            tracing::info!(version = version.version_id, "loaded production model");
        }
        Ok(state)
    }

    pub fn workspace(&self) -> Workspace {
        Workspace::new(&self.config.pipeline.data_dir)
    }

    pub fn threshold(&self) -> f64 {
        self.config.pipeline.training.threshold
    }

    pub fn run_active(&self) -> bool {
        self.run_active.load(Ordering::SeqCst)
    }

    pub fn last_run(&self) -> Option<RunSummary> {
        self.last_run.lock().expect("poisoned").clone()
    }

    /// Number of feedback records stored so far.
    pub fn feedback_len(&self) -> usize {
        self.feedback.lock().expect("poisoned").len()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub request_id: String,
    pub label: Label,
    pub probability: f32,
    pub model_version: u64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub request_id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub true_label: Option<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub version_id: u64,
    pub stage: lesionpipe::pipeline::Stage,
    pub eval: Option<EvalSummary>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerFlags {
    pub schedule: bool,
    pub degradation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineStatus {
    pub rolling_accuracy: Option<f64>,
    /// Feedback records in the window, out of `window_size`.
    pub window_fill: usize,
    pub window_size: usize,
    pub triggers: TriggerFlags,
    pub last_run: Option<RunSummary>,
    pub run_active: bool,
    pub model_version: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TriggerRequest {
    #[serde(default)]
    pub reason: Option<String>,
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn classify(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<ClassifyResponse>> {
    let start = Instant::now();
    let snapshot = app.model.get().ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no production model"))?;
    let worker = snapshot.clone();
    let (image, probability) = tokio::task::spawn_blocking(move || -> ApiResult<(PixelImage, f32)> {
        let image = PixelImage::decode(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
        let p = worker.score(&image).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
        Ok((image, p))
    })
    .await
    .map_err(ApiError::internal)??;
    let label = if f64::from(probability) >= app.threshold() { Label::Malignant } else { Label::Benign };
    let request_id = new_request_id();
    if app.config.serve.spill_uploads {
        let [_, h, w] = snapshot.config.input_shape;
        let path = pending_path(&app, &request_id);
        // a failed spill must not fail the clinical response
        if let Err(e) = resize_bilinear(&image, w, h).map_err(anyhow::Error::from).and_then(|img| Ok(img.save_png(&path)?)) {
            tracing::warn!(error = %e, "could not spill upload");
        }
    }
    app.requests.lock().expect("poisoned").insert(LoggedRequest {
        request_id: request_id.clone(),
        model_version: snapshot.version_id,
        label,
        probability,
        at: Utc::now(),
    });
    Ok(Json(ClassifyResponse {
        request_id,
        label,
        probability,
        model_version: snapshot.version_id,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    }))
}

fn pending_path(app: &AppState, request_id: &str) -> PathBuf {
    app.config.spill_dir().join("pending").join(format!("{request_id}.png"))
}

/// Moves a spilled upload into the spill manifest under its confirmed label.
fn confirm_spill(app: &AppState, request_id: &str, label: Label) -> anyhow::Result<()> {
    let pending = pending_path(app, request_id);
    if !pending.exists() {
        return Ok(());
    }
    let dir = app.config.spill_dir();
    let name = Path::new("images").join(format!("{request_id}.png"));
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::rename(&pending, dir.join(&name))?;
    let manifest_path = dir.join("manifest.json");
    let mut manifest = match std::fs::read_to_string(&manifest_path) {
        Ok(text) => serde_json::from_str::<DatasetManifest>(&text)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            let [c, h, w] = app.model.get().map(|s| s.config.input_shape).unwrap_or([3, 224, 224]);
            DatasetManifest::new(ExpectedShape { width: w, height: h, channels: c }, Vec::new())
        }
        Err(e) => return Err(e.into()),
    };
    manifest.records.push(SampleRecord::new(name, label).with_meta("source", "clinician"));
    let tmp = manifest_path.with_extension("json.tmp");
    std::fs::write(&tmp, manifest.to_json())?;
    std::fs::rename(tmp, manifest_path)?;
    Ok(())
}

async fn feedback(State(app): State<Arc<AppState>>, Json(req): Json<FeedbackRequest>) -> ApiResult<StatusCode> {
    let logged = app
        .requests
        .lock()
        .expect("poisoned")
        .get(&req.request_id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown request_id {}", req.request_id)))?;
    let record = FeedbackRecord {
        request_id: req.request_id,
        model_version: logged.model_version,
        verdict: req.verdict,
        true_label: req.true_label,
        submitted_at: Utc::now(),
    };
    let confirmed = match record.verdict {
        Verdict::Correct => logged.label,
        Verdict::Incorrect => record.true_label.unwrap_or(logged.label),
    };
    let id = record.request_id.clone();
    {
        let mut store = app.feedback.lock().expect("poisoned");
        store.append(record).map_err(|e| match e {
            PipelineError::DuplicateFeedback(_) => ApiError::new(StatusCode::CONFLICT, e.to_string()),
            PipelineError::MissingTrueLabel(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
            other => ApiError::internal(other),
        })?;
        if app.config.serve.spill_uploads {
            if let Err(e) = confirm_spill(&app, &id, confirmed) {
                tracing::warn!(error = %e, "could not move spilled upload");
            }
        }
    }
    Ok(StatusCode::NO_CONTENT)
}

async fn model_info(State(app): State<Arc<AppState>>) -> ApiResult<Json<ModelInfo>> {
    let s = app.model.get().ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no production model"))?;
    Ok(Json(ModelInfo { version_id: s.version_id, stage: s.stage, eval: s.eval.clone(), created_at: s.created_at }))
}

/// Status computed from persisted state plus the live feedback log.
pub fn pipeline_status(app: &AppState, now: DateTime<Utc>) -> anyhow::Result<PipelineStatus> {
    let version = app.model.get().map(|s| s.version_id);
    let (decision, state) = {
        let store = app.feedback.lock().expect("poisoned");
        triggers_with(&app.config.pipeline, now, &store, version)?
    };
    let last_run = app.last_run().or_else(|| {
        let id = state.last_run.as_ref()?;
        let text = std::fs::read_to_string(app.workspace().run_report(id)).ok()?;
        serde_json::from_str::<PipelineRunReport>(&text).ok().map(|r| RunSummary::from(&r))
    });
    Ok(PipelineStatus {
        rolling_accuracy: decision.rolling_accuracy,
        window_fill: decision.window_fill,
        window_size: app.config.pipeline.trigger.feedback_window,
        triggers: TriggerFlags { schedule: decision.has(Trigger::Schedule), degradation: decision.has(Trigger::Degradation) },
        last_run,
        run_active: app.run_active(),
        model_version: version,
    })
}

async fn status(State(app): State<Arc<AppState>>) -> ApiResult<Json<PipelineStatus>> {
    pipeline_status(&app, Utc::now()).map(Json).map_err(ApiError::internal)
}

/// Clears the active flag even if the run panics.
struct ActiveGuard(Arc<AppState>);

impl Drop for ActiveGuard {
    fn drop(&mut self) {
        self.0.run_active.store(false, Ordering::SeqCst);
    }
}

/// Starts a pipeline run in the background. Promotions hot-swap the served model.
pub fn start_run(app: &Arc<AppState>, reason: Option<String>) -> ApiResult<String> {
    if app.run_active.compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst).is_err() {
        return Err(ApiError::new(StatusCode::CONFLICT, "run already in progress"));
    }
    let guard = ActiveGuard(app.clone());
    if app.workspace().lock().exists() {
        return Err(ApiError::new(StatusCode::CONFLICT, "run already in progress"));
    }
    let run_id = new_run_id(Utc::now());
    tracing::info!(run_id, reason = reason.as_deref().unwrap_or(""), "pipeline run requested");
    let id = run_id.clone();
    tokio::task::spawn_blocking(move || {
        let app = guard.0.clone();
        let norm = app.config.pipeline.training.norm;
        let deploy = |v: &lesionpipe::pipeline::ModelVersion| -> Result<(), String> {
            let snapshot = ModelSnapshot::from_version(v, norm).map_err(|e| e.to_string())?;
            app.model.hot_swap(snapshot)
        };
        let summary = match run_pipeline_as(&id, &app.config.pipeline, &[Trigger::Manual], &deploy) {
            Ok(report) => RunSummary::from(&report),
            Err(e) => {
                tracing::error!(error = %e, "pipeline run failed to start");
                RunSummary {
                    run_id: id.clone(),
                    completed: false,
                    aborted_at: None,
                    promoted: false,
                    candidate_version: None,
                    finished_at: Some(Utc::now()),
                    error: Some(e.to_string()),
                }
            }
        };
        *app.last_run.lock().expect("poisoned") = Some(summary);
        drop(guard);
    });
    Ok(run_id)
}

async fn trigger(State(app): State<Arc<AppState>>, body: Option<Json<TriggerRequest>>) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let reason = body.and_then(|Json(b)| b.reason);
    let run_id = start_run(&app, reason)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "run_id": run_id }))))
}

async fn run_report(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<PipelineRunReport>> {
    if !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '.') {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad run id"));
    }
    let text = std::fs::read_to_string(app.workspace().run_report(&id))
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, format!("no run {id}")))?;
    serde_json::from_str(&text).map(Json).map_err(ApiError::internal)
}

async fn require_token(State(app): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(expected) = &app.config.serve.auth_token {
        let given = req.headers().get(TOKEN_HEADER).and_then(|v| v.to_str().ok());
        if given != Some(expected.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong token").into_response();
        }
    }
    next.run(req).await
}

pub fn router(app: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/classify", post(classify))
        .route("/feedback", post(feedback))
        .route("/model", get(model_info))
        .route("/pipeline/status", get(status))
        .route("/pipeline/trigger", post(trigger))
        .route("/pipeline/runs/{id}", get(run_report))
        .layer(middleware::from_fn_with_state(app.clone(), require_token));
    let mut router = Router::new()
        .route("/health", get(health))
        .nest("/api/v1", api)
        .layer(DefaultBodyLimit::max(app.config.serve.body_limit_bytes));
    if let Some(dir) = &app.config.serve.console_dir {
        router = router.nest_service("/console", ServeDir::new(dir));
    }
    router.with_state(app)
}

/// Binds and serves until ctrl-c.
pub async fn serve(app: Arc<AppState>) -> anyhow::Result<()> {
    let addr = format!("{}:{}", app.config.serve.bind, app.config.serve.port);
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
