use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use stepwise_core::backend::{BackendError, RemoteBackend, RemoteConfig};
use stepwise_core::{ChatBackend, RequestDefaults};

#[derive(Clone)]
struct Stub {
    hits: Arc<AtomicUsize>,
    /// Statuses returned for the first calls; later calls succeed.
    plan: Arc<Vec<u16>>,
}

async fn handler(State(stub): State<Stub>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let n = stub.hits.fetch_add(1, Ordering::SeqCst);
    if headers.get("authorization").and_then(|v| v.to_str().ok()) != Some("Bearer secret") {
        return (StatusCode::UNAUTHORIZED, Json(json!({"error": "bad key"})));
    }
    if let Some(code) = stub.plan.get(n) {
        return (StatusCode::from_u16(*code).unwrap(), Json(json!({"error": "planned"})));
    }
    let prompt = body["messages"][0]["content"].as_str().unwrap_or_default();
    (
        StatusCode::OK,
        Json(json!({"choices": [{"message": {"role": "assistant", "content": format!("echo: {prompt}")}}]})),
    )
}

async fn serve(plan: Vec<u16>) -> (String, Arc<AtomicUsize>) {
    let hits = Arc::new(AtomicUsize::new(0));
    let app = Router::new().route("/v1/chat/completions", post(handler)).with_state(Stub {
        hits: hits.clone(),
        plan: Arc::new(plan),
    });
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1/chat/completions"), hits)
}

fn backend(endpoint: String, key: &str, retry_budget: u32) -> RemoteBackend {
    RemoteBackend::new(
        RemoteConfig {
            endpoint,
            retry_budget,
            backoff_base_ms: 5,
            backoff_max_ms: 20,
            timeout_s: 5.0,
        },
        key,
    )
    .unwrap()
}

#[tokio::test]
async fn server_errors_exhaust_the_retry_budget() {
    let (url, hits) = serve(vec![500, 500, 500]).await;
    let err = backend(url, "secret", 2)
        .complete(&RequestDefaults::default().request("hi"))
        .await
        .unwrap_err();
    assert!(matches!(err, BackendError::Transport { attempts: 3, .. }), "{err:?}");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn transient_errors_recover() {
    let (url, hits) = serve(vec![503, 429]).await;
    let r = backend(url, "secret", 2)
        .complete(&RequestDefaults::default().request("hi"))
        .await
        .unwrap();
    assert_eq!(r.text, "echo: hi");
    assert!(r.t_system_s > 0.0);
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn rejected_key_is_not_retried() {
    let (url, hits) = serve(vec![]).await;
    let err = backend(url, "wrong", 3)
        .complete(&RequestDefaults::default().request("hi"))
        .await
        .unwrap_err();
    assert!(matches!(err, BackendError::Auth(_)));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn invalid_request_fails_fast() {
    let (url, hits) = serve(vec![]).await;
    let mut req = RequestDefaults::default().request("hi");
    req.temperature = 5.0;
    let err = backend(url, "secret", 3).complete(&req).await.unwrap_err();
    assert!(matches!(err, BackendError::InvalidRequest(_)));
    assert_eq!(hits.load(Ordering::SeqCst), 0);
}

#[tokio::test]
async fn unreachable_endpoint_is_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    drop(listener);
    let err = backend(url, "secret", 1)
        .complete(&RequestDefaults::default().request("hi"))
        .await
        .unwrap_err();
    assert!(matches!(err, BackendError::Transport { attempts: 2, .. }));
}
