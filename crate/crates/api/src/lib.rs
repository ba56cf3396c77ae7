//! HTTP service around the copper engine.
//!
//! Every mutating route is one engine command; the service adds transport,
//! error mapping and a resumable server-sent event stream of the
//! experiment's event log. With an adapter URL configured, queued jobs are
//! pushed to the adapter as they appear.

pub mod adapter;
mod error;
pub mod stream;

use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::routing::{get, post};
use axum::{Json, Router};
use copper_core::engine::{
    Engine, EngineError, ExperimentConfig, ExperimentSnapshot, Job, JobId, Queued, Suggestion,
};
use copper_core::{Sample, StrategyPlan};
use futures::stream::{Stream, StreamExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use adapter::{AdapterClient, RunRequest};
pub use error::{ApiError, ErrorBody, ErrorDetail, ServeError};
use stream::Hub;

/// JSON body extractor whose rejection is the service's error document.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(json_rejection(e)),
        }
    }
}

fn json_rejection(e: JsonRejection) -> ApiError {
    ApiError::bad_request(e.body_text())
}

fn query_rejection(e: QueryRejection) -> ApiError {
    ApiError::bad_request(e.body_text())
}

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    hub: Hub,
}

impl AppState {
    /// Wraps `engine`; each stream subscriber may fall at most
    /// `stream_buffer` events behind before it is disconnected.
    pub fn new(engine: Arc<Engine>, stream_buffer: usize) -> Self {
        let hub = Hub::attach(&engine, stream_buffer);
        Self { engine, hub }
    }

    /// Starts pushing queued jobs to an adapter. `public_url` is this
    /// service's base URL as the adapter should see it. Needs a running
    /// Tokio runtime.
    pub fn with_adapter(self, adapter_url: &str, public_url: &str) -> Self {
        adapter::spawn_dispatcher(self.engine.clone(), &self.hub, AdapterClient::new(adapter_url), public_url.to_string());
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub port: u16,
    pub data_dir: Option<PathBuf>,
    pub adapter_url: Option<String>,
    pub public_url: Option<String>,
    pub stream_buffer: usize,
}

impl ServiceConfig {
    pub const DEFAULT_STREAM_BUFFER: usize = 1024;

    /// Opens the engine (replaying every log under `data_dir`) and wires the
    /// stream and optional adapter. Fails on any unrecoverable log.
    pub fn build(&self, bound_port: u16) -> Result<AppState, EngineError> {
        let engine = match &self.data_dir {
            Some(dir) => Engine::open(dir)?,
            None => Engine::in_memory(),
        };
        let buffer = if self.stream_buffer == 0 { Self::DEFAULT_STREAM_BUFFER } else { self.stream_buffer };
        let state = AppState::new(Arc::new(engine), buffer);
        Ok(match &self.adapter_url {
            Some(url) => {
                let public = self.public_url.clone().unwrap_or_else(|| format!("http://127.0.0.1:{bound_port}"));
                state.with_adapter(url, &public)
            }
            None => state,
        })
    }
}

/// Binds, recovers state and serves until `shutdown` resolves.
pub async fn serve(
    config: ServiceConfig,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", config.port)).await?;
    let port = listener.local_addr()?.port();
    let state = config.build(port).map_err(ServeError::Recovery)?;
    tracing::info!(port, experiments = state.engine.experiment_ids().len(), "copper listening");
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await?;
    Ok(())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/experiments", post(create).get(list))
        .route("/experiments/{id}", get(snapshot))
        .route("/experiments/{id}/initial", post(initial))
        .route("/experiments/{id}/suggestions", get(suggestions))
        .route("/experiments/{id}/jobs", post(include_jobs))
        .route("/experiments/{id}/jobs/{job_id}/priority", post(priority))
        .route("/experiments/{id}/jobs/{job_id}/result", post(result))
        .route("/experiments/{id}/strategy", post(strategy))
        .route("/experiments/{id}/labels", post(labels))
        .route("/experiments/{id}/dispatch", post(dispatch))
        .route("/experiments/{id}/events", get(events))
        .with_state(state)
}

/// Runs an engine command off the async workers; suggestions and plans
/// can take a while on large spaces.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, EngineError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?.map_err(ApiError::from)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Created {
    pub id: String,
    pub snapshot: ExperimentSnapshot,
}

async fn create(State(s): State<AppState>, Body(config): Body<ExperimentConfig>) -> Result<(StatusCode, Json<Created>), ApiError> {
    let created = blocking(move || {
        let id = s.engine.create(config)?;
        let snapshot = s.engine.snapshot(&id)?;
        Ok(Created { id, snapshot })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn list(State(s): State<AppState>) -> Json<Vec<String>> {
    Json(s.engine.experiment_ids())
}

async fn snapshot(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<ExperimentSnapshot>, ApiError> {
    Ok(Json(blocking(move || s.engine.snapshot(&id)).await?))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct InitialRequest {
    pub count: usize,
    #[serde(default)]
    pub samples: Option<Vec<Sample>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Jobs {
    pub jobs: Vec<Job>,
}

async fn initial(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Body(req): Body<InitialRequest>,
) -> Result<(StatusCode, Json<Jobs>), ApiError> {
    let jobs = blocking(move || s.engine.initial_evaluation(&id, req.count, req.samples)).await?;
    Ok((StatusCode::CREATED, Json(Jobs { jobs })))
}

#[derive(Debug, Deserialize)]
struct SuggestQuery {
    #[serde(default = "default_n")]
    n: usize,
    /// Overrides the standing exploitation level for a plan preview.
    exploitation: Option<f64>,
}

fn default_n() -> usize {
    4
}

async fn suggestions(
    State(s): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<SuggestQuery>, QueryRejection>,
) -> Result<Json<Suggestion>, ApiError> {
    let Query(q) = q.map_err(query_rejection)?;
    Ok(Json(blocking(move || s.engine.suggest_at(&id, q.n, q.exploitation)).await?))
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct IncludeRequest {
    #[serde(default)]
    pub suggested: Vec<Sample>,
    #[serde(default)]
    pub adds: Vec<Sample>,
    #[serde(default)]
    pub removes: Vec<Sample>,
}

async fn include_jobs(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Body(req): Body<IncludeRequest>,
) -> Result<Json<Queued>, ApiError> {
    Ok(Json(blocking(move || s.engine.include_user_jobs(&id, req.suggested, req.adds, req.removes)).await?))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorityRequest {
    pub priority: i64,
}

async fn priority(
    State(s): State<AppState>,
    Path((id, job_id)): Path<(String, JobId)>,
    Body(req): Body<PriorityRequest>,
) -> Result<Json<Job>, ApiError> {
    let job = blocking(move || {
        s.engine.set_priority(&id, job_id, req.priority)?;
        s.engine.with_experiment(&id, |e| e.job(job_id).cloned())?.ok_or(EngineError::UnknownJob(job_id))
    })
    .await?;
    Ok(Json(job))
}

async fn result(
    State(s): State<AppState>,
    Path((id, job_id)): Path<(String, JobId)>,
    Body(req): Body<adapter::ResultBody>,
) -> Result<Json<Job>, ApiError> {
    Ok(Json(blocking(move || s.engine.ingest_result(&id, job_id, req.raw_outputs)).await?))
}

async fn strategy(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Body(plan): Body<StrategyPlan>,
) -> Result<Json<Queued>, ApiError> {
    Ok(Json(blocking(move || s.engine.apply_strategy(&id, &plan)).await?))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsRequest {
    pub labels: Vec<(Sample, bool)>,
}

async fn labels(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Body(req): Body<LabelsRequest>,
) -> Result<StatusCode, ApiError> {
    blocking(move || s.engine.label(&id, req.labels)).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Deserialize)]
struct DispatchQuery {
    max: Option<usize>,
}

/// Pull-style execution: hands out queued jobs to an external worker.
async fn dispatch(
    State(s): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<DispatchQuery>, QueryRejection>,
) -> Result<Json<Jobs>, ApiError> {
    let Query(q) = q.map_err(query_rejection)?;
    let jobs = blocking(move || s.engine.dispatch(&id, q.max.unwrap_or(usize::MAX))).await?;
    Ok(Json(Jobs { jobs }))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    from: Option<u64>,
}

/// Server-sent events from seq `from` (default 1). A reconnecting client's
/// `Last-Event-ID` takes over when `from` is absent.
async fn events(
    State(s): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<EventsQuery>, QueryRejection>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let Query(q) = q.map_err(query_rejection)?;
    let last_seen = match headers.get("last-event-id") {
        Some(v) => Some(
            v.to_str()
                .ok()
                .and_then(|v| v.trim().parse::<u64>().ok())
                .ok_or_else(|| ApiError::bad_request("Last-Event-ID must be an event seq"))?,
        ),
        None => None,
    };
    let from = q.from.or(last_seen.map(|s| s + 1)).unwrap_or(1);
    // Subscribe first so nothing committed while reading the backlog is lost.
    let rx = s.hub.subscribe();
    let backlog = s.engine.events_since(&id, from)?;
    let events = stream::experiment_events(id, from, backlog, rx).map(|e| {
        let sse = SseEvent::default().id(e.seq.to_string()).event(e.body.kind());
        Ok(sse.json_data(&e).unwrap_or_else(|_| SseEvent::default().comment("unserializable event")))
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}
