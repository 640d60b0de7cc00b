//! The HTTP provider against a local stub server.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use eicl::decision::{Mode, PromptBundle};
use eicl::llm::{HttpConfig, LlmClient, LlmError, ProviderConfig, ProviderKind, RetryPolicy};

#[derive(Default)]
struct Stats {
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    seen: Mutex<HashMap<String, usize>>,
    auth: Mutex<Vec<Option<String>>>,
}

#[derive(Clone, Copy)]
enum Behaviour {
    /// 429 with `Retry-After: 0` the first time a prompt is seen, then 200.
    ThrottleOnce,
    AlwaysFail(u16),
}

struct Stub {
    url: String,
    stats: Arc<Stats>,
}

fn read_request(stream: &mut TcpStream) -> (HashMap<String, String>, String) {
    let mut reader = BufReader::new(stream);
    let mut headers = HashMap::new();
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    loop {
        line.clear();
        reader.read_line(&mut line).unwrap();
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
        }
    }
    let len: usize = headers.get("content-length").and_then(|v| v.parse().ok()).unwrap_or(0);
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    (headers, String::from_utf8(body).unwrap())
}

fn respond(stream: &mut TcpStream, status: u16, extra: &str, body: &str) {
    let reason = match status {
        200 => "OK",
        429 => "Too Many Requests",
        _ => "Error",
    };
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n{extra}\r\n{body}",
        body.len()
    )
    .unwrap();
    stream.flush().unwrap();
}

fn handle(mut stream: TcpStream, stats: &Stats, behaviour: Behaviour) {
    let (headers, body) = read_request(&mut stream);
    stats.requests.fetch_add(1, Ordering::SeqCst);
    let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    stats.peak.fetch_max(now, Ordering::SeqCst);
    stats.auth.lock().unwrap().push(headers.get("authorization").cloned());
    thread::sleep(Duration::from_millis(15));

    let req: serde_json::Value = serde_json::from_str(&body).unwrap();
    let prompt = req["messages"].as_array().unwrap().last().unwrap()["content"]
        .as_str()
        .unwrap()
        .to_string();
    let count = {
        let mut seen = stats.seen.lock().unwrap();
        let c = seen.entry(prompt.clone()).or_insert(0);
        *c += 1;
        *c
    };
    stats.in_flight.fetch_sub(1, Ordering::SeqCst);
    match behaviour {
        Behaviour::ThrottleOnce if count == 1 => respond(&mut stream, 429, "retry-after: 0\r\n", "{}"),
        Behaviour::ThrottleOnce => {
            let answer = prompt.lines().next().unwrap_or("").replace("say ", "Emotion: ");
            let body = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": answer}}]});
            respond(&mut stream, 200, "", &body.to_string());
        }
        Behaviour::AlwaysFail(status) => respond(&mut stream, status, "", "{\"error\":\"boom\"}"),
    }
}

fn serve(behaviour: Behaviour) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let stats = Arc::new(Stats::default());
    let s = Arc::clone(&stats);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let s = Arc::clone(&s);
            thread::spawn(move || handle(stream, &s, behaviour));
        }
    });
    Stub { url, stats }
}

fn http_config(url: &str) -> HttpConfig {
    serde_json::from_value(serde_json::json!({"endpoint": url, "model": "stub-model", "timeout_secs": 10})).unwrap()
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 3,
        initial_backoff_ms: 1,
        multiplier: 2.0,
        max_backoff_ms: 5,
    }
}

fn client(url: &str, max_concurrency: usize) -> LlmClient {
    let mut cfg = ProviderConfig::new(ProviderKind::Http(http_config(url)));
    cfg.max_concurrency = max_concurrency;
    cfg.retry = fast_retry();
    LlmClient::from_config(&cfg).unwrap()
}

fn bundle(text: &str) -> PromptBundle {
    PromptBundle {
        mode: Mode::Zshot,
        text: text.to_string(),
        expected_labels: vec!["joy".into(), "anger".into()],
        split: None,
        query: text.to_string(),
        examples: Vec::new(),
    }
}

#[test]
fn throttled_request_is_retried() {
    let stub = serve(Behaviour::ThrottleOnce);
    let c = client(&stub.url, 1);
    assert_eq!(c.complete(&bundle("say joy")).unwrap(), "Emotion: joy");
    assert_eq!(stub.stats.requests.load(Ordering::SeqCst), 2);
}

#[test]
fn concurrency_never_exceeds_the_limit() {
    let stub = serve(Behaviour::ThrottleOnce);
    let c = client(&stub.url, 3);
    let answers: Vec<String> = thread::scope(|s| {
        let handles: Vec<_> = (0..12)
            .map(|i| {
                let c = &c;
                s.spawn(move || c.complete(&bundle(&format!("say joy\n#{i}"))).unwrap())
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(answers.iter().all(|a| a == "Emotion: joy"));
    assert_eq!(stub.stats.requests.load(Ordering::SeqCst), 24);
    let peak = stub.stats.peak.load(Ordering::SeqCst);
    assert!((1..=3).contains(&peak), "peak in-flight {peak}");
}

#[test]
fn persistent_server_errors_give_up_after_max_attempts() {
    let stub = serve(Behaviour::AlwaysFail(503));
    let c = client(&stub.url, 1);
    match c.complete(&bundle("say joy")) {
        Err(LlmError::Status { status, attempts, .. }) => {
            assert_eq!(status, 503);
            assert_eq!(attempts, 3);
        }
        other => panic!("expected a status error, got {other:?}"),
    }
    assert_eq!(stub.stats.requests.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let stub = serve(Behaviour::AlwaysFail(400));
    let c = client(&stub.url, 1);
    assert!(matches!(
        c.complete(&bundle("say joy")),
        Err(LlmError::Status { status: 400, attempts: 1, .. })
    ));
    assert_eq!(stub.stats.requests.load(Ordering::SeqCst), 1);
}

#[test]
fn bearer_token_comes_from_the_environment() {
    let stub = serve(Behaviour::ThrottleOnce);
    let mut h = http_config(&stub.url);
    h.api_key_env = Some("EICL_STUB_TEST_KEY".into());
    std::env::set_var("EICL_STUB_TEST_KEY", "sekrit");
    let mut cfg = ProviderConfig::new(ProviderKind::Http(h.clone()));
    cfg.retry = fast_retry();
    let c = LlmClient::from_config(&cfg).unwrap();
    c.complete(&bundle("say anger")).unwrap();
    let auth = stub.stats.auth.lock().unwrap().clone();
    assert!(auth.iter().all(|a| a.as_deref() == Some("Bearer sekrit")));

    h.api_key_env = Some("EICL_STUB_TEST_KEY_ABSENT".into());
    let cfg = ProviderConfig::new(ProviderKind::Http(h));
    assert!(matches!(LlmClient::from_config(&cfg), Err(LlmError::MissingCredentials(_))));
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let c = client(&format!("http://127.0.0.1:{port}/v1/chat/completions"), 1);
    assert!(matches!(
        c.complete(&bundle("say joy")),
        Err(LlmError::Transport { attempts: 3, .. })
    ));
}
