//! The adapter protocol.
//!
//! An adapter runs jobs for one application. The service POSTs a
//! [`RunRequest`] to the adapter's `/run`; the adapter answers `202` at once
//! and later POSTs `{"rawOutputs": [...]}` to the request's callback URL,
//! which is the service's result route for that job.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use copper_core::engine::{Engine, EventBody, JobId};
use copper_core::testbed::SyntheticApp;
use copper_core::Sample;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast::error::RecvError;

use crate::error::ApiError;
use crate::stream::Hub;
use crate::Body;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunRequest {
    pub experiment_id: String,
    pub job_id: JobId,
    pub sample: Sample,
    pub callback_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResultBody {
    pub raw_outputs: Vec<f64>,
}

/// HTTP client side of the protocol.
#[derive(Clone)]
pub struct AdapterClient {
    http: reqwest::Client,
    run_url: String,
}

impl AdapterClient {
    pub fn new(base_url: &str) -> Self {
        Self { http: reqwest::Client::new(), run_url: format!("{}/run", base_url.trim_end_matches('/')) }
    }

    pub async fn run(&self, request: &RunRequest) -> Result<(), reqwest::Error> {
        self.http.post(&self.run_url).json(request).send().await?.error_for_status()?;
        Ok(())
    }
}

/// Pushes every newly queued job of every experiment to the adapter.
/// Jobs are dispatched in the engine's priority order.
pub fn spawn_dispatcher(engine: Arc<Engine>, hub: &Hub, client: AdapterClient, public_url: String) {
    let mut rx = hub.subscribe();
    let public_url = public_url.trim_end_matches('/').to_string();
    tokio::spawn(async move {
        loop {
            let id = match rx.recv().await {
                Ok(item) if matches!(item.1.body, EventBody::JobsQueued { .. }) => item.0.clone(),
                Ok(_) => continue,
                Err(RecvError::Lagged(n)) => {
                    // Missed notifications: sweep every experiment.
                    tracing::warn!(skipped = n, "dispatcher lagged; sweeping all experiments");
                    for id in engine.experiment_ids() {
                        dispatch_all(&engine, &client, &public_url, &id).await;
                    }
                    continue;
                }
                Err(RecvError::Closed) => return,
            };
            dispatch_all(&engine, &client, &public_url, &id).await;
        }
    });
}

async fn dispatch_all(engine: &Engine, client: &AdapterClient, public_url: &str, id: &str) {
    let jobs = match engine.dispatch(id, usize::MAX) {
        Ok(jobs) => jobs,
        Err(e) => {
            tracing::warn!(experiment = id, error = %e, "dispatch failed");
            return;
        }
    };
    for job in jobs {
        let request = RunRequest {
            experiment_id: id.to_string(),
            job_id: job.id,
            callback_url: format!("{public_url}/experiments/{id}/jobs/{}/result", job.id),
            sample: job.sample,
        };
        if let Err(e) = client.run(&request).await {
            tracing::warn!(experiment = id, job = job.id, error = %e, "adapter rejected job");
        }
    }
}

#[derive(Clone)]
struct AdapterState {
    app: Arc<SyntheticApp>,
    http: reqwest::Client,
    latency: Duration,
}

/// Adapter service for a synthetic application.
pub fn synthetic_router(app: SyntheticApp, latency: Duration) -> Router {
    let state = AdapterState { app: Arc::new(app), http: reqwest::Client::new(), latency };
    Router::new()
        .route("/healthz", get(|| async { Json(serde_json::json!({ "status": "ok" })) }))
        .route("/run", post(run))
        .with_state(state)
}

async fn run(State(s): State<AdapterState>, Body(req): Body<RunRequest>) -> Result<StatusCode, ApiError> {
    let raw_outputs = s.app.run(&req.sample).map_err(|e| ApiError::bad_request(e.to_string()))?;
    tokio::spawn(async move {
        if !s.latency.is_zero() {
            tokio::time::sleep(s.latency).await;
        }
        let sent = s.http.post(&req.callback_url).json(&ResultBody { raw_outputs }).send().await;
        match sent.and_then(|r| r.error_for_status()) {
            Ok(_) => {}
            Err(e) => tracing::warn!(job = req.job_id, error = %e, "result callback failed"),
        }
    });
    Ok(StatusCode::ACCEPTED)
}
