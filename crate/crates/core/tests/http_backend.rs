use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use rankdistill_core::backend::{
    Backend, BackendError, CacheMode, CacheStore, CachedBackend, GenerationRequest, HttpBackend, HttpConfig,
};

#[derive(Clone, Default)]
struct Seen {
    bodies: Arc<Mutex<Vec<Value>>>,
    auth: Arc<Mutex<Vec<Option<String>>>>,
}

async fn generate(State(seen): State<Seen>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, String) {
    seen.auth
        .lock()
        .unwrap()
        .push(headers.get("authorization").map(|v| v.to_str().unwrap().to_string()));
    seen.bodies.lock().unwrap().push(body.clone());
    match body["prompt"].as_str().unwrap_or("") {
        "overloaded" => (StatusCode::SERVICE_UNAVAILABLE, "busy".into()),
        "garbage" => (StatusCode::OK, "not json".into()),
        "bad-probs" => (
            StatusCode::OK,
            json!({"text": "Yes", "option_probs": {"Yes": 1.5}}).to_string(),
        ),
        _ if body.get("echo_target").is_some() => (
            StatusCode::OK,
            json!({"text": "", "target_token_logprobs": [-0.5, -1.25]}).to_string(),
        ),
        _ => (
            StatusCode::OK,
            json!({"text": "Yes", "option_probs": {"Yes": 0.75, "No": 0.25}}).to_string(),
        ),
    }
}

/// Serves the mock on a background runtime; returns its base URL.
fn spawn_server(seen: Seen) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let app = Router::new().route("/v1/generate", post(generate)).with_state(seen);
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    format!("http://{addr}")
}

fn client(url: &str, token: Option<&str>) -> HttpBackend {
    let mut config = HttpConfig::new(url);
    config.token = token.map(str::to_string);
    config.backoff = Duration::from_millis(5);
    HttpBackend::new(config).unwrap()
}

#[test]
fn maps_request_and_response_fields() {
    let seen = Seen::default();
    let url = spawn_server(seen.clone());
    let backend = client(&url, Some("secret"));

    let req = GenerationRequest::text("Is it relevant?", 4).with_options(["Yes", "No"]);
    let r = backend.generate(&req).unwrap();
    assert_eq!(r.text, "Yes");
    assert_eq!(r.option_probs.unwrap()["Yes"], 0.75);

    let req = GenerationRequest::text("Write a question", 1).with_echo_target("what is it");
    let r = backend.generate(&req).unwrap();
    assert_eq!(r.target_token_logprobs, Some(vec![-0.5, -1.25]));

    let bodies = seen.bodies.lock().unwrap();
    assert_eq!(
        bodies[0],
        json!({"prompt": "Is it relevant?", "max_new_tokens": 4, "options": ["Yes", "No"]})
    );
    assert_eq!(bodies[1]["echo_target"], "what is it");
    assert!(bodies[1].get("options").is_none());
    assert_eq!(seen.auth.lock().unwrap()[0].as_deref(), Some("Bearer secret"));
    assert_eq!(backend.transport_calls(), 2);
}

#[test]
fn error_status_is_not_retried() {
    let url = spawn_server(Seen::default());
    let backend = client(&url, None);
    match backend.generate(&GenerationRequest::text("overloaded", 4)) {
        Err(BackendError::Status { status, body }) => {
            assert_eq!(status, 503);
            assert_eq!(body, "busy");
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(backend.transport_calls(), 1);
}

#[test]
fn malformed_bodies_are_protocol_errors() {
    let url = spawn_server(Seen::default());
    let backend = client(&url, None);
    assert!(matches!(
        backend.generate(&GenerationRequest::text("garbage", 4)),
        Err(BackendError::Protocol(_))
    ));
    assert!(matches!(
        backend.generate(&GenerationRequest::text("bad-probs", 4)),
        Err(BackendError::Protocol(_))
    ));
}

#[test]
fn transport_failures_are_retried() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let backend = client(&format!("http://127.0.0.1:{port}"), None);
    match backend.generate(&GenerationRequest::text("anyone there", 4)) {
        Err(BackendError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("{other:?}"),
    }
    assert_eq!(backend.transport_calls(), 3);
}

#[test]
fn replay_makes_no_transport_calls() {
    let seen = Seen::default();
    let url = spawn_server(seen.clone());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let requests: Vec<GenerationRequest> = (0..3)
        .map(|i| GenerationRequest::text(format!("prompt {i}"), 4).with_options(["Yes", "No"]))
        .collect();

    let recorder = CachedBackend::new(client(&url, None), CacheStore::open(&path).unwrap(), CacheMode::Record);
    let recorded: Vec<_> = requests.iter().map(|r| recorder.generate(r).unwrap()).collect();
    assert_eq!(recorder.inner().transport_calls(), 3);
    drop(recorder);

    let replayer = CachedBackend::new(client(&url, None), CacheStore::open(&path).unwrap(), CacheMode::Replay);
    let replayed: Vec<_> = requests.iter().map(|r| replayer.generate(r).unwrap()).collect();
    assert_eq!(replayed, recorded);
    assert_eq!(replayer.inner().transport_calls(), 0);
    assert_eq!(seen.bodies.lock().unwrap().len(), 3);
}
