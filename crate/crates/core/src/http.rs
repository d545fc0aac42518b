//! Injectable HTTP transport.
//!
//! Production code uses [`ReqwestTransport`]; tests replay recorded
//! responses through [`RecordedTransport`], which also counts requests.
//!
//! A recorded response is one file per endpoint:
//!
//! ```text
//! URL: https://api.github.com/repos/acme/widget/issues/42
//! Method: GET
//! Status: 200
//! Header: Content-Type: application/json
//!
//! {"title": ...}
//! ```
//!
//! The body after the first blank line is kept verbatim.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Get,
    Post,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
        }
    }

    fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_uppercase().as_str() {
            "GET" => Some(Method::Get),
            "POST" => Some(Method::Post),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: Method,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Option<String>,
}

impl HttpRequest {
    pub fn get(url: impl Into<String>) -> Self {
        Self {
            method: Method::Get,
            url: url.into(),
            headers: Vec::new(),
            body: None,
        }
    }

    pub fn post_json(url: impl Into<String>, body: String) -> Self {
        Self {
            method: Method::Post,
            url: url.into(),
            headers: vec![("Content-Type".into(), "application/json".into())],
            body: Some(body),
        }
    }

    pub fn header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.push((name.to_string(), value.into()));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl HttpResponse {
    pub fn new(status: u16, body: impl Into<String>) -> Self {
        Self {
            status,
            headers: Vec::new(),
            body: body.into(),
        }
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("no recorded response for {method} {url}")]
    NotRecorded { method: &'static str, url: String },
    #[error("bad fixture {path}: {reason}")]
    BadFixture { path: String, reason: String },
}

pub trait HttpTransport: Send + Sync {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .user_agent(concat!("commitlink/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| TransportError::Connection(e.to_string()))?;
        Ok(Self { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let mut builder = match request.method {
            Method::Get => self.client.get(&request.url),
            Method::Post => self.client.post(&request.url),
        };
        for (k, v) in &request.headers {
            builder = builder.header(k, v);
        }
        if let Some(body) = &request.body {
            builder = builder.body(body.clone());
        }
        let response = builder
            .send()
            .map_err(|e| TransportError::Connection(e.to_string()))?;
        let status = response.status().as_u16();
        let headers = response
            .headers()
            .iter()
            .map(|(k, v)| (k.to_string(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
            .collect();
        let body = response
            .text()
            .map_err(|e| TransportError::Connection(e.to_string()))?;
        Ok(HttpResponse { status, headers, body })
    }
}

/// Replays recorded responses keyed by method and URL. Several recordings
/// of the same endpoint are served in file-name order; the last one repeats.
#[derive(Default)]
pub struct RecordedTransport {
    responses: Mutex<HashMap<(Method, String), VecDeque<HttpResponse>>>,
    requests: AtomicUsize,
    log: Mutex<Vec<HttpRequest>>,
}

impl RecordedTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load_dir(dir: &Path) -> Result<Self, TransportError> {
        let transport = Self::new();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| TransportError::BadFixture {
                path: dir.display().to_string(),
                reason: e.to_string(),
            })?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        for path in paths {
            let text = std::fs::read_to_string(&path).map_err(|e| TransportError::BadFixture {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            let (method, url, response) =
                parse_fixture(&text).map_err(|reason| TransportError::BadFixture {
                    path: path.display().to_string(),
                    reason,
                })?;
            transport.insert(method, url, response);
        }
        Ok(transport)
    }

    pub fn insert(&self, method: Method, url: impl Into<String>, response: HttpResponse) {
        self.responses
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .entry((method, url.into()))
            .or_default()
            .push_back(response);
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<HttpRequest> {
        self.log.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

impl HttpTransport for RecordedTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        self.log
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(request.clone());
        let mut responses = self.responses.lock().unwrap_or_else(|p| p.into_inner());
        let queue = responses
            .get_mut(&(request.method, request.url.clone()))
            .ok_or_else(|| TransportError::NotRecorded {
                method: request.method.as_str(),
                url: request.url.clone(),
            })?;
        if queue.len() > 1 {
            Ok(queue.pop_front().expect("non-empty"))
        } else {
            queue.front().cloned().ok_or_else(|| TransportError::NotRecorded {
                method: request.method.as_str(),
                url: request.url.clone(),
            })
        }
    }
}

pub fn parse_fixture(text: &str) -> Result<(Method, String, HttpResponse), String> {
    let (head, body) = match text.find("\n\n") {
        Some(i) => (&text[..i], &text[i + 2..]),
        None => (text.trim_end_matches('\n'), ""),
    };
    let mut url = None;
    let mut method = Method::Get;
    let mut status = None;
    let mut headers = Vec::new();
    for line in head.lines() {
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| format!("header line without `:`: {line}"))?;
        let value = value.trim();
        match key.trim().to_ascii_lowercase().as_str() {
            "url" => url = Some(value.to_string()),
            "method" => method = Method::parse(value).ok_or_else(|| format!("bad method {value}"))?,
            "status" => status = Some(value.parse::<u16>().map_err(|e| format!("bad status: {e}"))?),
            "header" => {
                let (k, v) = value
                    .split_once(':')
                    .ok_or_else(|| format!("bad header {value}"))?;
                headers.push((k.trim().to_string(), v.trim().to_string()));
            }
            other => return Err(format!("unknown metadata field `{other}`")),
        }
    }
    let url = url.ok_or("missing URL")?;
    let status = status.ok_or("missing Status")?;
    Ok((
        method,
        url,
        HttpResponse {
            status,
            headers,
            body: body.to_string(),
        },
    ))
}

pub fn render_fixture(method: Method, url: &str, response: &HttpResponse) -> String {
    let mut out = format!("URL: {url}\nMethod: {}\nStatus: {}\n", method.as_str(), response.status);
    for (k, v) in &response.headers {
        out.push_str(&format!("Header: {k}: {v}\n"));
    }
    out.push('\n');
    out.push_str(&response.body);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 4,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_retries: 0,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    pub fn immediate(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    pub fn delay_for(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SendError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("still failing after {attempts} attempts (last status {status})")]
    Exhausted { attempts: u32, status: u16 },
}

/// Sends `request`, retrying connection failures and responses for which
/// `retryable` holds, with exponential backoff.
pub fn send_with_retry(
    transport: &dyn HttpTransport,
    request: &HttpRequest,
    policy: &RetryPolicy,
    retryable: impl Fn(&HttpResponse) -> bool,
) -> Result<HttpResponse, SendError> {
    let mut attempt = 0;
    loop {
        match transport.send(request) {
            Ok(response) if retryable(&response) => {
                if attempt >= policy.max_retries {
                    return Err(SendError::Exhausted {
                        attempts: attempt + 1,
                        status: response.status,
                    });
                }
                let hinted = response
                    .header("retry-after")
                    .and_then(|v| v.trim().parse::<u64>().ok())
                    .map(Duration::from_secs)
                    .unwrap_or_default()
                    .min(policy.max_delay);
                std::thread::sleep(policy.delay_for(attempt).max(hinted));
            }
            Ok(response) => return Ok(response),
            Err(TransportError::Connection(reason)) if attempt < policy.max_retries => {
                log::warn!("{} {} failed: {reason}; retrying", request.method.as_str(), request.url);
                std::thread::sleep(policy.delay_for(attempt));
            }
            Err(err) => return Err(err.into()),
        }
        attempt += 1;
    }
}
