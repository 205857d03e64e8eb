mod common;

use std::time::Duration;

use common::StubServer;
use slidegen_core::kb::{self, EmbedError, EmbeddingProvider, HttpEmbedder, KbEntry, KbKind};
use slidegen_core::llm::{BackendConfig, BackendKind, ChatBackend, ChatRequest, HttpBackend, LlmError};

fn chat_reply(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 12, "completion_tokens": 3}
    })
    .to_string()
}

fn backend(url: &str, key_env: &str, retries: u32) -> HttpBackend {
    HttpBackend::from_config(&BackendConfig {
        kind: BackendKind::Http,
        endpoint: Some(url.to_string()),
        model: Some("vision-model".into()),
        api_key_env: key_env.to_string(),
        timeout_secs: 5,
        retries,
        backoff_ms: 10,
        script: None,
    })
    .unwrap()
}

#[test]
fn chat_retries_transient_failure_then_succeeds() {
    std::env::set_var("SLIDEGEN_TEST_KEY_RETRY", "sk-test");
    let server = StubServer::start(vec![(500, "{}".into()), (200, chat_reply("```python\nx = 1\n```"))], 0);
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("design.png");
    std::fs::write(&img, [0x89, b'P', b'N', b'G']).unwrap();

    let req = ChatRequest::new("sys").image(&img).text("describe");
    let resp = backend(&server.url, "SLIDEGEN_TEST_KEY_RETRY", 2).complete(&req).unwrap();
    assert_eq!(resp.text, "```python\nx = 1\n```");
    assert_eq!(resp.usage.unwrap().completion_tokens, 3);

    let seen = server.join();
    assert_eq!(seen.len(), 2);
    let body = seen[1].json();
    assert!(seen[1].request_line.starts_with("POST /v1/endpoint"));
    assert_eq!(seen[1].header("authorization"), Some("Bearer sk-test"));
    assert_eq!(body["model"], "vision-model");
    assert_eq!(body["max_tokens"], 4096);
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["messages"][0]["content"], "sys");
    let content = &body["messages"][1]["content"];
    assert_eq!(content[0]["type"], "image_url");
    assert_eq!(content[0]["image_url"]["url"], "data:image/png;base64,iVBORw==");
    assert_eq!(content[1]["text"], "describe");
}

#[test]
fn chat_gives_up_after_retry_budget() {
    std::env::set_var("SLIDEGEN_TEST_KEY_BUDGET", "k");
    let server = StubServer::start(vec![(503, "{}".into())], 2);
    let err = backend(&server.url, "SLIDEGEN_TEST_KEY_BUDGET", 2)
        .complete(&ChatRequest::new("s").text("t"))
        .unwrap_err();
    assert!(matches!(err, LlmError::Transport(_)), "{err:?}");
    assert_eq!(server.join().len(), 3);
}

#[test]
fn chat_auth_and_empty_replies_are_not_retried() {
    std::env::set_var("SLIDEGEN_TEST_KEY_AUTH", "k");
    let server = StubServer::start(vec![(401, "{}".into())], 0);
    let err = backend(&server.url, "SLIDEGEN_TEST_KEY_AUTH", 3)
        .complete(&ChatRequest::new("s").text("t"))
        .unwrap_err();
    assert!(matches!(err, LlmError::Auth(_)));
    assert_eq!(server.join().len(), 1);

    let server = StubServer::start(vec![(200, chat_reply("   "))], 0);
    let err = backend(&server.url, "SLIDEGEN_TEST_KEY_AUTH", 3)
        .complete(&ChatRequest::new("s").text("t"))
        .unwrap_err();
    assert!(matches!(err, LlmError::EmptyResponse));
    assert_eq!(server.join().len(), 1);
}

#[test]
fn chat_missing_key_fails_before_any_request() {
    let server = StubServer::start(vec![(200, chat_reply("never"))], 0);
    let err = backend(&server.url, "SLIDEGEN_TEST_KEY_UNSET_XYZ", 0)
        .complete(&ChatRequest::new("s").text("t"))
        .unwrap_err();
    assert!(matches!(err, LlmError::Auth(_)));
    assert!(server.captured().is_empty());
}

#[test]
fn remote_embedder_accepts_both_payload_shapes() {
    let server = StubServer::start(
        vec![
            (200, r#"{"embedding":[3.0,4.0,0.0]}"#.into()),
            (200, r#"{"data":[{"embedding":[0.0,0.0,2.0]}]}"#.into()),
            (200, r#"{"embedding":[1.0,2.0]}"#.into()),
            (500, "{}".into()),
        ],
        0,
    );
    let e = HttpEmbedder::new(&server.url, "embed-model", 3, None, Duration::from_secs(5)).unwrap();
    let v = e.embed("title text").unwrap();
    assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
    assert_eq!(e.embed("other").unwrap(), vec![0.0, 0.0, 1.0]);
    assert!(matches!(e.embed("short"), Err(EmbedError::Dimension { expected: 3, actual: 2 })));
    assert!(matches!(e.embed("down"), Err(EmbedError::Transport(_))));
    let seen = server.join();
    assert_eq!(seen[0].json(), serde_json::json!({"model": "embed-model", "input": "title text"}));
    assert_eq!(seen[0].header("authorization"), None);
}

#[test]
fn remote_embedder_builds_searchable_index() {
    std::env::set_var("SLIDEGEN_TEST_EMBED_KEY", "ek");
    let server = StubServer::start(
        vec![
            (200, r#"{"embedding":[1.0,0.0]}"#.into()),
            (200, r#"{"embedding":[0.0,1.0]}"#.into()),
            (200, r#"{"embedding":[0.1,1.0]}"#.into()),
        ],
        0,
    );
    let e = HttpEmbedder::new(&server.url, "m", 2, Some("SLIDEGEN_TEST_EMBED_KEY"), Duration::from_secs(5)).unwrap();
    let entries: Vec<KbEntry> = ["a", "b"]
        .iter()
        .map(|id| KbEntry {
            id: id.to_string(),
            kind: KbKind::OperationFunction,
            name: format!("fn_{id}"),
            body: "body".into(),
        })
        .collect();
    let index = kb::build_index(&entries, &e, KbKind::OperationFunction).unwrap();
    let hits = kb::retrieve_top_k(&index, "query", 1, &e).unwrap();
    assert_eq!(hits[0].id, "b");
    assert!(HttpEmbedder::new(&server.url, "m", 2, Some("SLIDEGEN_TEST_EMBED_UNSET"), Duration::from_secs(1)).is_err());
    let seen = server.join();
    assert_eq!(seen[0].json()["input"], "fn_a\nbody");
    assert_eq!(seen[2].header("authorization"), Some("Bearer ek"));
}
