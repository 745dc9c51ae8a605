use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use factcheck_cli::server::router;
use factcheck_core::classify::chat::{ChatBackend, ChatRequest, ChatUnavailable};
use factcheck_core::config::PipelineConfig;
use factcheck_core::pipeline::{Backends, Pipeline};
use serde_json::{json, Value};
use tower::ServiceExt;

const ARYA: &str = "Arya Stark was created by George R. R. Martin.";

fn fixture(name: &str) -> PathBuf {
    let base = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    match name {
        "examples" => base.join("../core/fixtures/examples"),
        other => base.join("tests/fixtures").join(other),
    }
}

fn backends(name: &str) -> (Backends, PipelineConfig) {
    let dir = fixture(name);
    let config = PipelineConfig {
        fixture_dir: Some(dir.clone()),
        ..PipelineConfig::default()
    };
    (Backends::from_fixture_dir(&dir, &config).expect("fixture backends"), config)
}

fn app(name: &str, max_in_flight: usize) -> Router {
    let (b, config) = backends(name);
    router(Arc::new(Pipeline::new(b, config).unwrap()), max_in_flight)
}

struct SlowChat {
    inner: Arc<dyn ChatBackend>,
    delay: Duration,
}

#[async_trait::async_trait]
impl ChatBackend for SlowChat {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ChatUnavailable> {
        tokio::time::sleep(self.delay).await;
        self.inner.complete(request).await
    }
}

fn slow_app(delay: Duration, max_in_flight: usize) -> Router {
    let (mut b, config) = backends("examples");
    b.chat = Arc::new(SlowChat { inner: b.chat.clone(), delay });
    router(Arc::new(Pipeline::new(b, config).unwrap()), max_in_flight)
}

async fn send(app: Router, method: Method, uri: &str, body: Body) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body)
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), 1 << 20).await.unwrap();
    let v = serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("non-JSON body ({e}): {bytes:?}"));
    (status, v)
}

async fn post(app: Router, body: Value) -> (StatusCode, Value) {
    send(app, Method::POST, "/verify", Body::from(body.to_string())).await
}

#[tokio::test]
async fn verify_returns_result() {
    let (status, v) = post(app("examples", 4), json!({ "claim": ARYA, "id": "a3" })).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["claim_id"], "a3");
    assert_eq!(v["final_label"], "Supported");
    assert_eq!(v["stage"], "kg");
}

#[tokio::test]
async fn missing_id_is_generated() {
    let (status, v) = post(app("examples", 4), json!({ "claim": ARYA })).await;
    assert_eq!(status, StatusCode::OK);
    assert!(v["claim_id"].as_str().unwrap().starts_with("req-"));
}

#[tokio::test]
async fn empty_claim_is_422() {
    let (status, v) = post(app("examples", 4), json!({ "claim": "   " })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["kind"], "empty_claim");
}

#[tokio::test]
async fn malformed_bodies_are_400() {
    let (status, v) = send(app("examples", 4), Method::POST, "/verify", Body::from("{not json")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["kind"], "malformed_json");

    let (status, v) = post(app("examples", 4), json!({ "text": ARYA })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["kind"], "malformed_body");
}

#[tokio::test]
async fn pipeline_failure_is_502_with_diagnostics() {
    let (status, v) = post(app("eval4", 4), json!({ "claim": "Unrecorded claim." })).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(v["error"]["kind"], "pipeline_error");
    assert!(v["diagnostics"].is_object(), "{v}");
}

#[tokio::test]
async fn budget_overrun_is_504() {
    let app = slow_app(Duration::from_millis(400), 4);
    let (status, v) = post(app, json!({ "claim": ARYA, "options": { "budget_ms": 50 } })).await;
    assert_eq!(status, StatusCode::GATEWAY_TIMEOUT, "{v}");
    assert_eq!(v["error"]["kind"], "budget_exceeded");
}

#[tokio::test]
async fn options_are_whitelisted_and_validated() {
    let (status, v) = post(
        app("examples", 4),
        json!({ "claim": ARYA, "options": { "sparql_endpoint": "http://169.254.169.254/" } }),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["kind"], "invalid_option");

    let (status, _) = post(app("examples", 4), json!({ "claim": ARYA, "options": { "k": 0 } })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, v) = post(app("examples", 4), json!({ "claim": ARYA, "options": { "budget_ms": "5000" } })).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["final_label"], "Supported");
}

#[tokio::test]
async fn healthz_and_unknown_routes_are_json() {
    let (status, v) = send(app("examples", 1), Method::GET, "/healthz", Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v, json!({ "status": "ok" }));

    let (status, v) = send(app("examples", 1), Method::GET, "/nope", Body::empty()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["kind"], "not_found");

    let (status, v) = send(app("examples", 1), Method::GET, "/verify", Body::empty()).await;
    assert_eq!(status, StatusCode::METHOD_NOT_ALLOWED);
    assert_eq!(v["error"]["kind"], "method_not_allowed");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn in_flight_cap_serializes_requests() {
    let delay = Duration::from_millis(150);
    let app = slow_app(delay, 1);
    let started = Instant::now();
    let (a, b) = tokio::join!(
        post(app.clone(), json!({ "claim": ARYA, "id": "x" })),
        post(app.clone(), json!({ "claim": ARYA, "id": "y" })),
    );
    assert_eq!(a.0, StatusCode::OK);
    assert_eq!(b.0, StatusCode::OK);
    assert!(started.elapsed() >= delay * 2, "{:?}", started.elapsed());
}
