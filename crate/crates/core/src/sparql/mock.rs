//! Local HTTP server speaking enough of the SPARQL protocol for tests and
//! offline runs: it answers `GET ?query=...` from a handler.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::json;

use super::{parse_sparql, Answers, QueryBackend};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockResponse {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl MockResponse {
    pub fn new(status: u16, body: impl Into<String>) -> Self {
        MockResponse {
            status,
            body: body.into(),
            delay: Duration::ZERO,
        }
    }

    pub fn delayed(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

pub type Handler = Arc<dyn Fn(&str) -> MockResponse + Send + Sync>;

/// Serializes answers as a SPARQL JSON results document.
pub fn results_json(answers: &Answers, var: &str) -> String {
    match answers {
        Answers::Boolean(b) => json!({"head": {}, "boolean": b}).to_string(),
        Answers::Values(values) => {
            let bindings: Vec<_> = values
                .iter()
                .map(|v| {
                    let kind = if v.contains("://") { "uri" } else { "literal" };
                    json!({ var: {"type": kind, "value": v} })
                })
                .collect();
            json!({"head": {"vars": [var]}, "results": {"bindings": bindings}}).to_string()
        }
    }
}

/// Background server; shuts down when dropped.
pub struct MockServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Starts a server whose handler receives the decoded `query` parameter.
    pub fn start(handler: Handler) -> MockServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        listener.set_nonblocking(true).expect("nonblocking listener");
        let addr = listener.local_addr().expect("local addr");
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = std::thread::spawn(move || {
            while !flag.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let h = handler.clone();
                        std::thread::spawn(move || {
                            let _ = serve(stream, &h);
                        });
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(5));
                    }
                    Err(_) => break,
                }
            }
        });
        MockServer {
            addr,
            stop,
            thread: Some(thread),
        }
    }

    /// Starts a server that evaluates each query against `backend`.
    pub fn serving(backend: Arc<dyn QueryBackend + Send + Sync>) -> MockServer {
        MockServer::start(Arc::new(move |text: &str| {
            let query = match parse_sparql(text) {
                Ok(q) => q,
                Err(e) => return MockResponse::new(400, e.to_string()),
            };
            match backend.execute(&query) {
                Ok(a) => MockResponse::new(200, results_json(&a, &query.answer_var)),
                Err(e) => MockResponse::new(500, e.to_string()),
            }
        }))
    }

    pub fn url(&self) -> String {
        format!("http://{}/sparql", self.addr)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn serve(mut stream: TcpStream, handler: &Handler) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    loop {
        let mut header = String::new();
        if reader.read_line(&mut header)? == 0 || header == "\r\n" || header == "\n" {
            break;
        }
    }
    let target = request_line.split_whitespace().nth(1).unwrap_or("/");
    let query = target
        .split_once('?')
        .map(|(_, qs)| {
            url::form_urlencoded::parse(qs.as_bytes())
                .find(|(k, _)| k == "query")
                .map(|(_, v)| v.into_owned())
                .unwrap_or_default()
        })
        .unwrap_or_default();
    let response = handler(&query);
    if !response.delay.is_zero() {
        std::thread::sleep(response.delay);
    }
    let reason = match response.status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        _ => "Error",
    };
    let content_type = if response.status == 200 {
        "application/sparql-results+json"
    } else {
        "text/plain"
    };
    write!(
        stream,
        "HTTP/1.1 {} {reason}\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.status,
        response.body.len(),
        response.body
    )?;
    stream.flush()
}
