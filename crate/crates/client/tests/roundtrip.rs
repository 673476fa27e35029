//! Client-against-server round trips.

use std::sync::Arc;

use memloop_client::{Client, ClientError};
use memloop_core::api::{CompressRequest, RunRequest};
use memloop_core::pipeline::PipelineConfig;
use memloop_server::{serve, AppState};

async fn spawn_offline_server() -> Client {
    // Synthetic embeddings, no chat fixtures: enough for health/compress,
    // and any chat call misses loudly.
    let state = Arc::new(AppState::new(PipelineConfig::offline_default()).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        serve(listener, state).await.unwrap();
    });
    Client::new(format!("http://{addr}"))
}

#[tokio::test]
async fn health_round_trips() {
    let client = spawn_offline_server().await;
    let health = client.health().await.unwrap();
    assert_eq!(health.status, "ok");
    assert_eq!(health.mode, "fixture");
}

#[tokio::test]
async fn compress_round_trips() {
    let client = spawn_offline_server().await;
    let sessions = r#"{"session_id":"s1","turn_index":0,"speaker":"user","text":"alpha beta gamma delta epsilon"}"#;
    let response = client
        .compress(&CompressRequest {
            sessions_jsonl: format!("{sessions}\n"),
            ratio: 0.4,
            seed: 3,
        })
        .await
        .unwrap();
    assert!(response.sessions_jsonl.contains("\"session_id\":\"s1\""));
}

#[tokio::test]
async fn api_errors_carry_kind_and_status() {
    let client = spawn_offline_server().await;
    let err = client
        .run(&RunRequest {
            sessions_jsonl: "garbage\n".into(),
            gold_jsonl: None,
            options: Default::default(),
        })
        .await
        .unwrap_err();
    match err {
        ClientError::Api { status, kind, .. } => {
            assert_eq!(status, 400);
            assert_eq!(kind, "parse");
        }
        other => panic!("expected api error, got {other:?}"),
    }
}

#[tokio::test]
async fn transport_errors_are_distinguished() {
    let client = Client::new("http://127.0.0.1:9");
    let err = client.health().await.unwrap_err();
    assert!(matches!(err, ClientError::Transport(_)), "{err:?}");
}
