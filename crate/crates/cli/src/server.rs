//! JSON-over-HTTP service.
//!
//! `POST /v1/answer` takes `{"question": "...", "trace": false}` and returns
//! `{"kind": "text" | "sql_result", "answer": ..., "trace": [...]}`.
//! `GET /v1/health` returns `{"status": "ok", "databases": <count>}`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Request, State};
use axum::http::{HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tracing::Instrument;

use relmem_core::pipeline::FailureKind;
use relmem_core::Pipeline;

#[derive(Debug, Deserialize)]
pub struct AnswerRequest {
    pub question: String,
    #[serde(default)]
    pub trace: bool,
}

pub fn router(pipeline: Arc<Pipeline>) -> Router {
    Router::new()
        .route("/v1/answer", post(answer))
        .route("/v1/health", get(health))
        .layer(middleware::from_fn(log_request))
        .with_state(pipeline)
}

fn error_body(status: StatusCode, code: &str, message: String, trace: Option<Value>) -> Response {
    let mut body = json!({ "error": { "code": code, "message": message } });
    if let Some(trace) = trace {
        body["trace"] = trace;
    }
    (status, Json(body)).into_response()
}

fn status_for(kind: &FailureKind) -> StatusCode {
    match kind {
        FailureKind::EmptyQuestion => StatusCode::BAD_REQUEST,
        FailureKind::Llm(e) if e.is_provider_failure() => StatusCode::BAD_GATEWAY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

async fn answer(State(pipeline): State<Arc<Pipeline>>, body: Result<Json<AnswerRequest>, JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(rejection) => return error_body(rejection.status(), "bad_request", rejection.body_text(), None),
    };
    let with_trace = req.trace;
    let result = tokio::task::spawn_blocking(move || pipeline.answer(&req.question)).await;
    match result {
        Ok(Ok(response)) => Json(response.to_wire(with_trace)).into_response(),
        Ok(Err(failure)) => error_body(
            status_for(&failure.kind),
            failure.kind.code(),
            failure.kind.to_string(),
            with_trace.then(|| json!(failure.trace)),
        ),
        Err(join) => error_body(StatusCode::INTERNAL_SERVER_ERROR, "internal", join.to_string(), None),
    }
}

async fn health(State(pipeline): State<Arc<Pipeline>>) -> Json<Value> {
    Json(json!({ "status": "ok", "databases": pipeline.catalog.len() }))
}

static REQUEST_ID: AtomicU64 = AtomicU64::new(1);

async fn log_request(req: Request, next: Next) -> Response {
    let id = REQUEST_ID.fetch_add(1, Ordering::Relaxed);
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let started = Instant::now();
    let span = tracing::info_span!("request", id, %method, %path);
    let mut response = next.run(req).instrument(span.clone()).await;
    tracing::info!(
        parent: &span,
        status = response.status().as_u16(),
        elapsed_ms = started.elapsed().as_secs_f64() * 1e3,
        "handled"
    );
    if let Ok(v) = HeaderValue::from_str(&id.to_string()) {
        response.headers_mut().insert("x-request-id", v);
    }
    response
}

pub async fn serve(pipeline: Arc<Pipeline>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(pipeline))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
