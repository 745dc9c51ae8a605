//! `POST /verify` and `GET /healthz`. Every response body is JSON.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use factcheck_core::config::PipelineConfig;
use factcheck_core::domain::{Claim, Diagnostics};
use factcheck_core::pipeline::{Pipeline, PipelineError};
use serde::Deserialize;
use serde_json::{json, Map, Value};
use tokio::sync::Semaphore;

/// Tunables a request may override. Endpoints and credentials stay fixed.
pub const REQUEST_OPTIONS: [&str; 7] = [
    "k",
    "n_max",
    "triple_cap",
    "budget_ms",
    "stages",
    "kg_classifier",
    "web_classifier",
];

pub struct AppState {
    pipeline: Arc<Pipeline>,
    in_flight: Semaphore,
    next_id: AtomicU64,
}

pub fn router(pipeline: Arc<Pipeline>, max_in_flight: usize) -> Router {
    let state = Arc::new(AppState {
        pipeline,
        in_flight: Semaphore::new(max_in_flight.max(1)),
        next_id: AtomicU64::new(1),
    });
    Router::new()
        .route("/verify", post(verify))
        .route("/healthz", get(healthz))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(state)
}

#[derive(Deserialize)]
struct VerifyRequest {
    claim: String,
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    options: Option<Map<String, Value>>,
}

fn error(status: StatusCode, kind: &str, message: impl Into<String>, diagnostics: Option<&Diagnostics>) -> Response {
    let mut body = json!({ "error": { "kind": kind, "message": message.into() } });
    if let Some(d) = diagnostics {
        body["diagnostics"] = json!(d);
    }
    (status, Json(body)).into_response()
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn not_found() -> Response {
    error(StatusCode::NOT_FOUND, "not_found", "no such route", None)
}

async fn method_not_allowed() -> Response {
    error(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed on this route", None)
}

fn apply_options(base: &PipelineConfig, options: &Map<String, Value>) -> Result<PipelineConfig, String> {
    let mut config = base.clone();
    for (key, value) in options {
        if !REQUEST_OPTIONS.contains(&key.as_str()) {
            return Err(format!("option {key:?} cannot be set per request"));
        }
        let text = match value {
            Value::String(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            other => return Err(format!("option {key:?} must be a string or number, got {other}")),
        };
        config.set(key, &text).map_err(|e| e.to_string())?;
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

async fn verify(State(state): State<Arc<AppState>>, body: Result<Bytes, BytesRejection>) -> Response {
    let body = match body {
        Ok(b) => b,
        Err(e) => return error(e.status(), "unreadable_body", e.body_text(), None),
    };
    let value: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return error(StatusCode::BAD_REQUEST, "malformed_json", e.to_string(), None),
    };
    let req: VerifyRequest = match serde_json::from_value(value) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, "malformed_body", e.to_string(), None),
    };
    let config = match &req.options {
        Some(o) => match apply_options(state.pipeline.config(), o) {
            Ok(c) => c,
            Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, "invalid_option", e, None),
        },
        None => state.pipeline.config().clone(),
    };
    let id = req
        .id
        .filter(|s| !s.trim().is_empty())
        .unwrap_or_else(|| format!("req-{}", state.next_id.fetch_add(1, Ordering::Relaxed)));
    let claim = match Claim::new(id, req.claim) {
        Ok(c) => c,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, "empty_claim", e.to_string(), None),
    };

    let Ok(_permit) = state.in_flight.acquire().await else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "shutting_down", "server is shutting down", None);
    };
    match state.pipeline.verify_claim_with(&claim, &config).await {
        Ok(result) => (StatusCode::OK, Json(result)).into_response(),
        Err(e @ PipelineError::BudgetExceeded { .. }) => {
            error(StatusCode::GATEWAY_TIMEOUT, "budget_exceeded", e.to_string(), None)
        }
        Err(PipelineError::Config(e)) => error(StatusCode::UNPROCESSABLE_ENTITY, "invalid_option", e.to_string(), None),
        Err(e) => error(StatusCode::BAD_GATEWAY, "pipeline_error", e.to_string(), e.diagnostics()),
    }
}
