use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use relmem_cli::config::{CliConfig, Settings};
use relmem_cli::server::router;
use relmem_cli::store::Store;
use relmem_core::{fixtures, Pipeline};
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn pipeline(dir: &TempDir, script: &str) -> Pipeline {
    let mut settings = Settings {
        store: Some(dir.path().join("store")),
        ..Settings::default()
    };
    settings.llm.script = Some(data(script));
    settings.pipeline.trace_timings = Some(false);
    let config = CliConfig::resolve(settings).unwrap();

    let store = Store::new(&config.store);
    let mut catalog = store.catalog().unwrap();
    for (id, ddl) in [("restaurants", fixtures::RESTAURANTS_DDL), ("singer", fixtures::SINGER_DDL)] {
        let path = fixtures::write_database(dir.path(), id, ddl).unwrap();
        catalog.register_named(&path, id, id).unwrap();
    }
    store.save_catalog(&catalog).unwrap();
    let embedder = config.embedder();
    store.build_selection(embedder.as_ref()).unwrap();
    store.build_values(embedder.as_ref(), &config.values).unwrap();
    store.pipeline(&config).unwrap()
}

async fn call(p: Arc<Pipeline>, req: Request<Body>) -> (StatusCode, Option<String>, Value) {
    let resp = router(p).oneshot(req).await.unwrap();
    let status = resp.status();
    let id = resp.headers().get("x-request-id").map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, id, serde_json::from_slice(&bytes).unwrap())
}

fn post(body: &str) -> Request<Body> {
    Request::post("/v1/answer")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

#[tokio::test]
async fn health_counts_databases() {
    let dir = tempfile::tempdir().unwrap();
    let p = Arc::new(pipeline(&dir, "thai.jsonl"));
    let (status, id, body) = call(p, Request::get("/v1/health").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert!(id.is_some());
    assert_eq!(body, json!({"status": "ok", "databases": 2}));
}

#[tokio::test]
async fn answer_returns_a_sql_result() {
    let dir = tempfile::tempdir().unwrap();
    let p = Arc::new(pipeline(&dir, "thai.jsonl"));
    let req = json!({"question": "Show me all the Thai restaurants in New York", "trace": true});
    let (status, _, body) = call(p, post(&req.to_string())).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["kind"], "sql_result");
    let text = body["answer"].to_string();
    assert!(text.contains("Thai Palace") && text.contains("Bangkok Bites"), "{text}");
    let stages: Vec<&str> = body["trace"].as_array().unwrap().iter().map(|s| s["stage"].as_str().unwrap()).collect();
    assert_eq!(stages.first(), Some(&"context_switch"));
}

#[tokio::test]
async fn trace_is_omitted_unless_asked() {
    let dir = tempfile::tempdir().unwrap();
    let p = Arc::new(pipeline(&dir, "thai.jsonl"));
    let (status, _, body) = call(p, post(r#"{"question": "Show me all the Thai restaurants in New York"}"#)).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body.get("trace").map_or(true, Value::is_null), "{body}");
}

#[tokio::test]
async fn empty_question_is_a_bad_request() {
    let dir = tempfile::tempdir().unwrap();
    let p = Arc::new(pipeline(&dir, "thai.jsonl"));
    let (status, _, body) = call(p, post(r#"{"question": "   "}"#)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "empty_question");
}

#[tokio::test]
async fn malformed_json_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = Arc::new(pipeline(&dir, "thai.jsonl"));
    let (status, _, body) = call(p.clone(), post("{not json")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "bad_request");
    let (status, _, _) = call(p, post(r#"{"text": "hi"}"#)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn provider_outage_is_a_bad_gateway() {
    let dir = tempfile::tempdir().unwrap();
    let p = Arc::new(pipeline(&dir, "outage.jsonl"));
    let (status, _, body) = call(p, post(r#"{"question": "How many singers are there?", "trace": true}"#)).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["error"]["code"], "provider_unavailable");
    assert!(!body["trace"].as_array().unwrap().is_empty());
}
