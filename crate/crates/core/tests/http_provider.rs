//! The HTTP provider against a minimal in-process server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use base64::Engine as _;
use serde_json::{json, Value};

use storyreel_core::artifact::{ArtifactStore, MemoryArtifactStore};
use storyreel_core::clock::FixedClock;
use storyreel_core::config::{ProviderConfig, ProviderKind, RetryConfig};
use storyreel_core::utility::http::HttpProvider;
use storyreel_core::utility::{GenerationParams, SpeechSynthesizer, TextGenerator};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    authorization: Option<String>,
    body: Value,
}

/// Serves `responses` in order, one per connection, and records requests.
fn serve(responses: Vec<(u16, Value)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut length = 0;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => authorization = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                path: request_line.split_whitespace().nth(1).unwrap().to_string(),
                authorization,
                body: serde_json::from_slice(&buf).unwrap(),
            });
            let payload = body.to_string();
            let mut out = stream;
            write!(
                out,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            )
            .unwrap();
        }
    });
    (url, seen)
}

fn provider(url: &str, token_env: &str, cache: Option<std::path::PathBuf>) -> (HttpProvider, Arc<MemoryArtifactStore>) {
    let store = Arc::new(MemoryArtifactStore::new(Arc::new(FixedClock::new(0))));
    let cfg = ProviderConfig {
        kind: ProviderKind::Http,
        base_url: format!("{url}/"),
        token_env: token_env.into(),
        timeout_secs: 5,
        retries: 2,
    };
    let retry = RetryConfig {
        max_retries: 2,
        initial_backoff_ms: 1,
    };
    (HttpProvider::new(&cfg, &retry, store.clone(), cache).unwrap(), store)
}

#[test]
fn text_request_shape_and_bearer_token() {
    std::env::set_var("STORYREEL_TEST_TOKEN_A", "sekret");
    let (url, seen) = serve(vec![(200, json!({ "text": "hello" }))]);
    let (p, _) = provider(&url, "STORYREEL_TEST_TOKEN_A", None);
    let params = GenerationParams {
        seed: 9,
        ..GenerationParams::default()
    };
    assert_eq!(p.text_generate("write a title", &params).unwrap(), "hello");
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/text_generate");
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer sekret"));
    assert_eq!(seen[0].body["prompt"], "write a title");
    assert_eq!(seen[0].body["seed"], 9);
}

#[test]
fn server_errors_are_retried_and_client_errors_are_not() {
    let (url, seen) = serve(vec![(503, json!({})), (429, json!({})), (200, json!({ "text": "ok" }))]);
    let (p, _) = provider(&url, "STORYREEL_TEST_UNSET", None);
    assert_eq!(p.text_generate("x", &GenerationParams::default()).unwrap(), "ok");
    assert_eq!(seen.lock().unwrap().len(), 3);
    assert!(seen.lock().unwrap()[0].authorization.is_none());

    let (url, seen) = serve(vec![(400, json!({ "error": "bad" }))]);
    let (p, _) = provider(&url, "STORYREEL_TEST_UNSET", None);
    let err = p.text_generate("x", &GenerationParams::default()).unwrap_err();
    assert!(!err.is_transient());
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn binary_results_land_in_the_store_and_replies_are_cached() {
    let dir = tempfile::tempdir().unwrap();
    let wav = storyreel_core::utility::media::silent_wave(1100);
    let b64 = base64::engine::general_purpose::STANDARD.encode(&wav);
    let (url, seen) = serve(vec![(200, json!({ "data_b64": b64, "duration_ms": 1100 }))]);
    let (p, store) = provider(&url, "STORYREEL_TEST_UNSET", Some(dir.path().join("cache")));
    let (r, ms) = p.tts("Lina sings to Ember", "narrator").unwrap();
    assert_eq!(ms, 1100);
    assert_eq!(store.get(&r).unwrap(), wav);
    assert_eq!(seen.lock().unwrap()[0].body["voice_id"], "narrator");

    // the server is gone; an identical request is answered from the cache
    let (again, ms) = p.tts("Lina sings to Ember", "narrator").unwrap();
    assert_eq!((again, ms), (r, 1100));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_reply_is_a_permanent_failure() {
    let (url, _) = serve(vec![(200, json!({ "words": "no text field" }))]);
    let (p, _) = provider(&url, "STORYREEL_TEST_UNSET", None);
    let err = p.text_generate("x", &GenerationParams::default()).unwrap_err();
    assert!(!err.is_transient());
    assert!(err.to_string().contains("text"));
}
