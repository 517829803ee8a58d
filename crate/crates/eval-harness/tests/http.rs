mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};

use common::{endpoint, fixture};
use medvlm_eval::run::{RESULTS_FILE, TIMINGS_FILE};
use medvlm_eval::{run_eval, EvalOptions, HttpDecoder, TemplateRegistry};
use serde_json::{json, Value};

/// Minimal chat-completions server. Replies with the option letter
/// `B` for every question and answers the first `fail_first` requests for
/// each question with 503.
struct MockServer {
    url: String,
    hits: Arc<Mutex<BTreeMap<String, u32>>>,
    bodies: Arc<Mutex<Vec<Value>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<Value> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut len = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    serde_json::from_slice(&body).ok()
}

fn respond(stream: &mut TcpStream, status: &str, body: &str) {
    let _ = write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
}

fn question_of(body: &Value) -> String {
    let last = body["messages"].as_array().unwrap().last().unwrap();
    last["content"]
        .as_array()
        .unwrap()
        .iter()
        .filter_map(|p| p["text"].as_str())
        .collect::<String>()
        .lines()
        .next()
        .unwrap_or("")
        .to_string()
}

impl MockServer {
    fn start(fail_first: u32) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let hits = Arc::new(Mutex::new(BTreeMap::new()));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let (h, b) = (hits.clone(), bodies.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let (h, b) = (h.clone(), b.clone());
                std::thread::spawn(move || {
                    let Some(req) = read_request(&mut stream) else { return };
                    let q = question_of(&req);
                    let n = {
                        let mut hits = h.lock().unwrap();
                        let c = hits.entry(q.clone()).or_insert(0);
                        *c += 1;
                        *c
                    };
                    b.lock().unwrap().push(req);
                    if n <= fail_first {
                        respond(&mut stream, "503 Service Unavailable", "{}");
                    } else {
                        let reply = json!({"choices": [{"message": {"role": "assistant", "content": format!("{q} -> Answer: B")}}]});
                        respond(&mut stream, "200 OK", &reply.to_string());
                    }
                });
            }
        });
        Self { url, hits, bodies }
    }
}

fn http_endpoint(url: &str, concurrency: usize) -> medvlm_eval::EndpointConfig {
    let mut e = endpoint(concurrency);
    e.base_url = url.into();
    e.model = "mock".into();
    e.timeout_secs = 10;
    e
}

#[test]
fn retries_transport_failures_then_succeeds() {
    let server = MockServer::start(2);
    let bench = &fixture()[..5];
    let registry = TemplateRegistry::builtin();
    let dir = tempfile::tempdir().unwrap();
    let ep = http_endpoint(&server.url, 1);
    let decoder = HttpDecoder::new(ep.clone(), dir.path()).unwrap();
    let out = run_eval(
        bench,
        &decoder,
        registry.get("medvlm-chat").unwrap(),
        &EvalOptions {
            out_dir: dir.path().join("out"),
            endpoint: ep,
            resume: false,
        },
    )
    .unwrap();
    assert!(out.records.iter().all(|r| r.failure.is_none() && r.extracted.as_deref() == Some("B")));
    assert!(server.hits.lock().unwrap().values().all(|&n| n == 3));
    let timings = fs::read_to_string(dir.path().join("out").join(TIMINGS_FILE)).unwrap();
    assert_eq!(timings.lines().filter(|l| l.contains("\"attempts\":3")).count(), 5);

    // the wire format carries greedy parameters verbatim
    let bodies = server.bodies.lock().unwrap();
    let b = &bodies[0];
    assert_eq!(b["temperature"], json!(0.0));
    assert_eq!(b["max_tokens"], json!(2048));
    assert_eq!(b["model"], json!("mock"));
    assert_eq!(b["messages"][0]["role"], json!("system"));
}

#[test]
fn exhausted_retries_mark_instance_failed() {
    let server = MockServer::start(10);
    let bench = &fixture()[..2];
    let registry = TemplateRegistry::builtin();
    let dir = tempfile::tempdir().unwrap();
    let ep = http_endpoint(&server.url, 2);
    let decoder = HttpDecoder::new(ep.clone(), dir.path()).unwrap();
    let out = run_eval(
        bench,
        &decoder,
        registry.get("plain").unwrap(),
        &EvalOptions {
            out_dir: dir.path().join("out"),
            endpoint: ep,
            resume: false,
        },
    )
    .unwrap();
    assert!(out.records.iter().all(|r| !r.correct && r.failure.is_some()));
    assert_eq!(out.summary.score.overall.accuracy, 0.0);
    assert!(server.hits.lock().unwrap().values().all(|&n| n == 4));
}

#[test]
fn concurrency_four_matches_one() {
    let server = MockServer::start(0);
    let bench = &fixture()[..40];
    let registry = TemplateRegistry::builtin();
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for c in [1, 4] {
        let ep = http_endpoint(&server.url, c);
        let decoder = HttpDecoder::new(ep.clone(), dir.path()).unwrap();
        let out_dir = dir.path().join(format!("c{c}"));
        run_eval(
            bench,
            &decoder,
            registry.get("medvlm-chat").unwrap(),
            &EvalOptions {
                out_dir: out_dir.clone(),
                endpoint: ep,
                resume: false,
            },
        )
        .unwrap();
        files.push((fs::read(out_dir.join(RESULTS_FILE)).unwrap(), fs::read(out_dir.join("summary.json")).unwrap()));
    }
    assert_eq!(files[0], files[1]);
}
