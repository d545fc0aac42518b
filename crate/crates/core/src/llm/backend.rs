use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use super::wire::parse_response;
use crate::http::{send_with_retry, HttpRequest, HttpTransport, RetryPolicy, SendError};
use crate::registry::ToolCall;

pub const DEFAULT_MODEL: &str = "gpt-4o-mini";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssistantReply {
    pub text: Option<String>,
    pub calls: Vec<ToolCall>,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("OPENAI_API_KEY is not set")]
    MissingKey,
    #[error("chat request failed: {0}")]
    Transport(#[from] SendError),
    #[error("chat endpoint returned {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed chat response: {0}")]
    Malformed(String),
    #[error("script line {line}: {reason}")]
    Script { line: usize, reason: String },
    #[error("cannot read script {path}: {source}")]
    ScriptIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("script exhausted after {0} steps")]
    ScriptExhausted(usize),
}

/// Produces the next assistant turn for an encoded chat request.
pub trait ChatBackend: Send {
    fn complete(&mut self, request: &Value) -> Result<AssistantReply, BackendError>;
}

/// Chat-completions over HTTP. Key and base URL come from the environment.
pub struct LiveBackend {
    transport: Arc<dyn HttpTransport>,
    base_url: String,
    api_key: String,
    retry: RetryPolicy,
}

impl LiveBackend {
    pub fn new(transport: Arc<dyn HttpTransport>, base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            transport,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            retry: RetryPolicy::default(),
        }
    }

    /// `OPENAI_API_KEY`, and `OPENAI_BASE_URL` if set.
    pub fn from_env(transport: Arc<dyn HttpTransport>) -> Result<Self, BackendError> {
        let key = std::env::var("OPENAI_API_KEY")
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or(BackendError::MissingKey)?;
        let base = std::env::var("OPENAI_BASE_URL")
            .ok()
            .filter(|b| !b.is_empty())
            .unwrap_or_else(|| DEFAULT_BASE_URL.to_string());
        Ok(Self::new(transport, base, key))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl ChatBackend for LiveBackend {
    fn complete(&mut self, request: &Value) -> Result<AssistantReply, BackendError> {
        let req = HttpRequest::post_json(format!("{}/chat/completions", self.base_url), request.to_string())
            .header("Authorization", format!("Bearer {}", self.api_key));
        let response = send_with_retry(self.transport.as_ref(), &req, &self.retry, |r| {
            r.status == 429 || r.status >= 500
        })?;
        if !response.is_success() {
            return Err(BackendError::Status {
                status: response.status,
                body: response.body.chars().take(500).collect(),
            });
        }
        let body: Value =
            serde_json::from_str(&response.body).map_err(|e| BackendError::Malformed(e.to_string()))?;
        parse_response(&body).map_err(BackendError::Malformed)
    }
}

/// One scripted assistant turn.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptStep {
    pub text: Option<String>,
    pub calls: Vec<(String, Value)>,
}

impl ScriptStep {
    pub fn call(name: &str, args: Value) -> Self {
        Self {
            text: None,
            calls: vec![(name.to_string(), args)],
        }
    }

    pub fn text(text: &str) -> Self {
        Self {
            text: Some(text.to_string()),
            calls: Vec::new(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCall {
    call: String,
    #[serde(default)]
    args: Option<Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    #[serde(default)]
    call: Option<String>,
    #[serde(default)]
    args: Option<Value>,
    #[serde(default)]
    calls: Option<Vec<RawCall>>,
    #[serde(default)]
    text: Option<String>,
}

/// Replays a fixed list of turns. Call ids are `call_1`, `call_2`, ... and
/// the string `$last` inside arguments is replaced by the previous call's id,
/// which lets a script answer a feedback request. Every request body is kept
/// for inspection.
///
/// Script files hold one JSON object per line:
///
/// ```text
/// {"call": "issue_title"}
/// {"call": "commit_diff", "args": {"commit_hash": "..."}}
/// {"call": "feedback", "args": {"call_id": "$last", "verdict": "discard"}}
/// {"calls": [{"call": "list_authors"}, {"call": "issue_participants"}]}
/// {"text": "plain reply without a tool call"}
/// ```
///
/// Blank lines and lines starting with `#` are ignored.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    steps: Vec<ScriptStep>,
    cursor: usize,
    issued: usize,
    requests: Vec<String>,
}

impl ScriptedBackend {
    pub fn new(steps: Vec<ScriptStep>) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    pub fn parse(script: &str) -> Result<Self, BackendError> {
        let mut steps = Vec::new();
        for (i, line) in script.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| BackendError::Script { line: i + 1, reason };
            let raw: RawStep = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            let mut calls = Vec::new();
            if let Some(name) = raw.call {
                calls.push((name, raw.args.unwrap_or_else(|| Value::Object(Default::default()))));
            } else if raw.args.is_some() {
                return Err(bad("`args` without `call`".into()));
            }
            for c in raw.calls.unwrap_or_default() {
                calls.push((c.call, c.args.unwrap_or_else(|| Value::Object(Default::default()))));
            }
            if calls.is_empty() && raw.text.is_none() {
                return Err(bad("step needs `call`, `calls`, or `text`".into()));
            }
            steps.push(ScriptStep { text: raw.text, calls });
        }
        Ok(Self::new(steps))
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|source| BackendError::ScriptIo {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Serialized request bodies in send order.
    pub fn requests(&self) -> &[String] {
        &self.requests
    }

    pub fn remaining(&self) -> usize {
        self.steps.len() - self.cursor
    }
}

fn substitute_last(value: &Value, last: &str) -> Value {
    match value {
        Value::String(s) if s == "$last" => Value::String(last.to_string()),
        Value::Array(items) => Value::Array(items.iter().map(|v| substitute_last(v, last)).collect()),
        Value::Object(map) => Value::Object(
            map.iter()
                .map(|(k, v)| (k.clone(), substitute_last(v, last)))
                .collect(),
        ),
        other => other.clone(),
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&mut self, request: &Value) -> Result<AssistantReply, BackendError> {
        self.requests.push(request.to_string());
        let step = self
            .steps
            .get(self.cursor)
            .cloned()
            .ok_or(BackendError::ScriptExhausted(self.steps.len()))?;
        self.cursor += 1;
        let mut calls = Vec::with_capacity(step.calls.len());
        for (name, args) in step.calls {
            let last = format!("call_{}", self.issued);
            self.issued += 1;
            calls.push(ToolCall::new(
                format!("call_{}", self.issued),
                name,
                substitute_last(&args, &last),
            ));
        }
        Ok(AssistantReply { text: step.text, calls })
    }
}
