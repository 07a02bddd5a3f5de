//! Runs `detect --agent` against a scripted local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use clap::Parser;
use sadp::cli::{execute, read_spans, Cli, CliError};
use sadp::corpus::Document;
use sadp::pii_detect::{AgentClient, AgentRequest, PiiRegistry};

struct Stub {
    url: String,
    requests: Arc<Mutex<Vec<AgentRequest>>>,
}

/// Serves one scripted `(status, body)` reply per connection, in order.
fn stub(replies: Vec<(u16, String)>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/extract", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let seen = Arc::clone(&requests);
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some((name, value)) = line.split_once(':') {
                    if name.eq_ignore_ascii_case("content-length") {
                        length = value.trim().parse().unwrap();
                    }
                }
            }
            let mut raw = vec![0; length];
            reader.read_exact(&mut raw).unwrap();
            seen.lock().unwrap().push(serde_json::from_slice(&raw).unwrap());
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    Stub { url, requests }
}

fn ok(body: &str) -> (u16, String) {
    (200, body.to_string())
}

#[test]
fn client_aligns_agent_values_to_offsets() {
    let doc = Document::plain("d1", "write to bob@example.com or call 555-123-4567");
    let s = stub(vec![ok(
        r#"{"spans":[{"type":"EMAIL","value":"bob@example.com"},{"type":"PHONE","value":"555-123-4567"},
            {"type":"PASSPORT","value":"X1"},{"type":"SSN","value":"000-00-0000"}]}"#,
    )]);
    let found = AgentClient::new(&s.url).detect(&doc, &PiiRegistry::default_registry()).unwrap();
    assert_eq!(found.unknown_types, 1);
    assert_eq!(found.unaligned, 1);
    let spans: Vec<_> = found.spans.iter().map(|p| (p.start, p.end, p.pii_type.as_str())).collect();
    assert_eq!(spans, [(9, 24, "EMAIL"), (33, 45, "PHONE")]);

    let req = &s.requests.lock().unwrap()[0];
    assert_eq!(req.doc_id, "d1");
    assert_eq!(req.text, doc.text);
    assert_eq!(req.allowed_types.len(), 7);
}

#[test]
fn malformed_reply_is_a_protocol_error() {
    let doc = Document::plain("d1", "nothing here");
    let s = stub(vec![ok(r#"{"entities":[]}"#)]);
    let err = AgentClient::new(&s.url).detect(&doc, &PiiRegistry::default_registry()).unwrap_err();
    assert!(!err.is_retryable());
    assert!(err.to_string().contains("entities"), "{err}");
}

fn detect_cli(url: &str, corpus: &std::path::Path, out: &std::path::Path) -> Result<serde_json::Value, CliError> {
    let cli = Cli::try_parse_from([
        "sadp",
        "detect",
        "--corpus",
        corpus.to_str().unwrap(),
        "--agent",
        url,
        "--out",
        out.to_str().unwrap(),
    ])
    .unwrap();
    execute(&cli)
}

#[test]
fn cli_retries_server_errors() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    std::fs::write(&corpus, "mail amy@example.com today\n").unwrap();
    let out = dir.path().join("spans.jsonl");
    let s = stub(vec![
        (503, "busy".into()),
        (500, "oops".into()),
        ok(r#"{"spans":[{"type":"EMAIL","value":"amy@example.com"}]}"#),
    ]);
    let summary = detect_cli(&s.url, &corpus, &out).unwrap();
    assert_eq!(summary["detector"], "agent");
    assert_eq!(s.requests.lock().unwrap().len(), 3);
    let spans = read_spans(&out).unwrap();
    assert_eq!((spans[0].start, spans[0].end), (5, 20));
}

#[test]
fn cli_gives_up_with_agent_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    std::fs::write(&corpus, "hello\n").unwrap();
    let s = stub(vec![(500, "a".into()), (500, "b".into()), (500, "c".into())]);
    let err = detect_cli(&s.url, &corpus, &dir.path().join("o")).unwrap_err();
    assert_eq!(err.exit_code(), 3);

    let s = stub(vec![(400, "bad request".into())]);
    let err = detect_cli(&s.url, &corpus, &dir.path().join("o")).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert_eq!(s.requests.lock().unwrap().len(), 1);
}

#[test]
fn unreachable_agent_is_retryable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let doc = Document::plain("d", "x");
    let err = AgentClient::new(format!("http://127.0.0.1:{port}/"))
        .detect(&doc, &PiiRegistry::default_registry())
        .unwrap_err();
    assert!(err.is_retryable(), "{err}");
}
