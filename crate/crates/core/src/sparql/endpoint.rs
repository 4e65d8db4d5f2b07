use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use super::{Answers, QueryBackend, SparqlQuery};

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EndpointError {
    #[error("network failure: {0}")]
    Network(String),
    #[error("HTTP status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed results: {0}")]
    Malformed(String),
    #[error("request timed out")]
    Timeout,
}

/// SPARQL-protocol client: GET with a `query` parameter, JSON results.
#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    url: String,
    agent: ureq::Agent,
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        HttpEndpoint { url: url.into(), agent }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

fn is_timeout(err: &ureq::Transport) -> bool {
    let mut source: Option<&(dyn std::error::Error + 'static)> = std::error::Error::source(err);
    while let Some(e) = source {
        if let Some(io) = e.downcast_ref::<std::io::Error>() {
            if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) {
                return true;
            }
        }
        source = e.source();
    }
    err.to_string().contains("timed out")
}

/// Parses a SPARQL JSON results document. SELECT results yield the values
/// bound to `var` (or to the first head variable when `var` is absent).
pub fn parse_results(body: &str, var: &str) -> Result<Answers, EndpointError> {
    let doc: Value = serde_json::from_str(body).map_err(|e| EndpointError::Malformed(e.to_string()))?;
    if let Some(b) = doc.get("boolean") {
        return b
            .as_bool()
            .map(Answers::Boolean)
            .ok_or_else(|| EndpointError::Malformed("non-boolean 'boolean' field".into()));
    }
    let bindings = doc
        .pointer("/results/bindings")
        .and_then(Value::as_array)
        .ok_or_else(|| EndpointError::Malformed("missing results.bindings".into()))?;
    let head_var = doc
        .pointer("/head/vars/0")
        .and_then(Value::as_str)
        .unwrap_or(var)
        .to_string();
    let mut values = Vec::with_capacity(bindings.len());
    for b in bindings {
        let obj = b.as_object().ok_or_else(|| EndpointError::Malformed("binding is not an object".into()))?;
        let cell = obj.get(var).or_else(|| obj.get(&head_var));
        if let Some(cell) = cell {
            let v = cell
                .get("value")
                .and_then(Value::as_str)
                .ok_or_else(|| EndpointError::Malformed("binding without value".into()))?;
            values.push(v.to_string());
        }
    }
    Ok(Answers::Values(values))
}

impl QueryBackend for HttpEndpoint {
    fn execute(&self, query: &SparqlQuery) -> Result<Answers, EndpointError> {
        let response = self
            .agent
            .get(&self.url)
            .query("query", &query.executable())
            .set("Accept", "application/sparql-results+json")
            .call();
        let body = match response {
            Ok(r) => r.into_string().map_err(|e| EndpointError::Network(e.to_string()))?,
            Err(ureq::Error::Status(status, r)) => {
                return Err(EndpointError::Http {
                    status,
                    body: r.into_string().unwrap_or_default(),
                })
            }
            Err(ureq::Error::Transport(t)) if is_timeout(&t) => return Err(EndpointError::Timeout),
            Err(ureq::Error::Transport(t)) => return Err(EndpointError::Network(t.to_string())),
        };
        parse_results(&body, &query.answer_var)
    }
}

/// Runs every query with at most `max_in_flight` concurrent requests.
/// Results keep the input order.
pub fn execute_all<B: QueryBackend + Sync + ?Sized>(
    backend: &B,
    queries: &[SparqlQuery],
    max_in_flight: usize,
) -> Vec<Result<Answers, EndpointError>> {
    let results: Vec<Mutex<Option<Result<Answers, EndpointError>>>> = queries.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = max_in_flight.max(1).min(queries.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(q) = queries.get(i) else { break };
                let r = backend.execute(q);
                *results[i].lock().unwrap() = Some(r);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every query is executed"))
        .collect()
}
