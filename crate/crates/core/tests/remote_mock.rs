use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use pcod_core::corpus::{Corpus, Document};
use pcod_core::embedding::{embed_corpus_uncached, EmbedError, Embedder, ProviderConfig, RemoteEmbedder};
use serde_json::{json, Value};

struct Request {
    auth: Option<String>,
    body: Value,
}

type Handler = dyn Fn(&Request, usize) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server; `handler` gets the parsed request and a 0-based call index.
struct Mock {
    url: String,
    calls: Arc<AtomicUsize>,
    seen: Arc<Mutex<Vec<Request>>>,
}

impl Mock {
    fn start(handler: impl Fn(&Request, usize) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/embeddings", listener.local_addr().unwrap());
        let calls = Arc::new(AtomicUsize::new(0));
        let seen = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let (c, s) = (calls.clone(), seen.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let (handler, calls, seen) = (handler.clone(), c.clone(), s.clone());
                thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut len = 0;
                    let mut auth = None;
                    loop {
                        let mut line = String::new();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 {
                            return;
                        }
                        let line = line.trim_end();
                        if line.is_empty() {
                            break;
                        }
                        if let Some((k, v)) = line.split_once(':') {
                            match k.to_ascii_lowercase().as_str() {
                                "content-length" => len = v.trim().parse().unwrap(),
                                "authorization" => auth = Some(v.trim().to_string()),
                                _ => {}
                            }
                        }
                    }
                    let mut body = vec![0; len];
                    reader.read_exact(&mut body).unwrap();
                    let req = Request {
                        auth,
                        body: serde_json::from_slice(&body).unwrap(),
                    };
                    let n = calls.fetch_add(1, Ordering::SeqCst);
                    let (status, payload) = handler(&req, n);
                    seen.lock().unwrap().push(req);
                    let resp = format!(
                        "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                        payload.len()
                    );
                    let _ = stream.write_all(resp.as_bytes());
                });
            }
        });
        Self { url, calls, seen }
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

/// Deterministic 3-d vector per text.
fn vector(text: &str) -> Value {
    json!([text.len() as f64, text.matches('a').count() as f64 + 1.0, 1.0])
}

fn ok_response(req: &Request) -> (u16, String) {
    let data: Vec<Value> = req.body["input"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| json!({ "embedding": vector(t.as_str().unwrap()) }))
        .collect();
    (200, json!({ "data": data }).to_string())
}

fn config(url: &str, batch: usize) -> ProviderConfig {
    let mut c = ProviderConfig::remote("mock-model", url, "secret-token");
    c.batch_size = batch;
    c.backoff_ms = 1;
    c
}

fn corpus(n: usize) -> Corpus {
    let docs = (0..n)
        .map(|i| Document {
            id: format!("d{i:03}"),
            text: format!("alpha paper number {i} {}", "a".repeat(i % 7)),
            domain: "Physics".into(),
            field_name: "wavelength".into(),
            extracted_value: i as f64,
            cluster_id: None,
        })
        .collect();
    Corpus::new(docs, vec![]).unwrap()
}

#[test]
fn batches_and_preserves_order() {
    let mock = Mock::start(|r, _| ok_response(r));
    let out = embed_corpus_uncached(&config(&mock.url, 4), &corpus(10)).unwrap();
    assert_eq!(mock.calls(), 3);
    assert_eq!(out.len(), 10);
    for (v, d) in out.iter().zip(corpus(10).documents()) {
        assert_eq!(v.doc_id, d.id);
        let raw: Vec<f64> = serde_json::from_value(vector(&d.text)).unwrap();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, b) in v.values().iter().zip(&raw) {
            assert!((a - b / norm).abs() < 1e-12);
        }
    }
    let seen = mock.seen.lock().unwrap();
    assert!(seen.iter().all(|r| r.auth.as_deref() == Some("Bearer secret-token")));
    assert!(seen.iter().all(|r| r.body["model"] == "mock-model"));
}

#[test]
fn retries_transient_failures() {
    let mock = Mock::start(|r, n| if n < 2 { (503, "busy".into()) } else { ok_response(r) });
    let out = embed_corpus_uncached(&config(&mock.url, 64), &corpus(5)).unwrap();
    assert_eq!(out.len(), 5);
    assert_eq!(mock.calls(), 3);
}

#[test]
fn rate_limit_is_retried_until_exhausted() {
    let mock = Mock::start(|_, _| (429, "slow down".into()));
    let err = embed_corpus_uncached(&config(&mock.url, 64), &corpus(3)).unwrap_err();
    assert!(err.is_provider_failure(), "{err}");
    // first attempt plus three retries
    assert_eq!(mock.calls(), 4);
}

#[test]
fn client_errors_are_not_retried() {
    let mock = Mock::start(|_, _| (401, "bad key".into()));
    let err = embed_corpus_uncached(&config(&mock.url, 64), &corpus(3)).unwrap_err();
    assert!(err.is_provider_failure());
    assert_eq!(mock.calls(), 1);
}

#[test]
fn failed_batch_names_only_its_documents() {
    // any batch containing d005 fails permanently
    let mock = Mock::start(|r, _| {
        let has = r.body["input"]
            .as_array()
            .unwrap()
            .iter()
            .any(|t| t.as_str().unwrap().contains("number 5 "));
        if has {
            (400, "rejected".into())
        } else {
            ok_response(r)
        }
    });
    let err = embed_corpus_uncached(&config(&mock.url, 4), &corpus(10)).unwrap_err();
    match err {
        EmbedError::Partial { failed_ids, .. } => assert_eq!(failed_ids, vec!["d004", "d005", "d006", "d007"]),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn malformed_response_is_an_error() {
    let mock = Mock::start(|_, _| (200, json!({"data": [{"vector": [1]}]}).to_string()));
    let e = RemoteEmbedder::new(config(&mock.url, 64)).unwrap();
    assert!(matches!(e.embed_batch(&["x"]), Err(EmbedError::Response(_))));
}

#[test]
fn unreachable_endpoint_is_a_provider_failure() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = config(&format!("http://127.0.0.1:{port}/v1"), 64);
    let err = embed_corpus_uncached(&cfg, &corpus(2)).unwrap_err();
    assert!(err.is_provider_failure(), "{err}");
}

#[test]
fn credential_never_serialized() {
    let cfg = config("http://example.invalid", 8);
    let echoed = serde_json::to_string(&cfg).unwrap();
    assert!(!echoed.contains("secret-token"));
    assert!(echoed.contains("mock-model"));
}
