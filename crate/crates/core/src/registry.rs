//! Tool schemas and the registry that routes model-issued calls to the
//! extractor that owns them.
//!
//! Routing never fails the session: unknown tools, malformed arguments and
//! extractor errors all come back as an error payload the model can read.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::domain::{CommitHash, Pagination, Timestamp, DEFAULT_PAGE_SIZE, MAX_PAGE_SIZE};

pub const GIT_TOOLS: [&str; 7] = [
    "list_commits",
    "list_authors",
    "commits_of_author",
    "list_files",
    "commits_on_file",
    "commit_diff",
    "commit_metadata",
];

pub const ISSUE_TOOLS: [&str; 7] = [
    "issue_title",
    "issue_description",
    "issue_created_at",
    "issue_closed_at",
    "issue_author",
    "issue_comments",
    "issue_participants",
];

pub const CODE_TOOLS: [&str; 3] = ["fetch_definition", "fetch_document", "fetch_lines_in_file"];

pub const CONTROL_TOOLS: [&str; 3] = ["finish", "give_up", "feedback"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    Text,
    Integer,
    CommitHash,
    Path,
    Glob,
    Timestamp,
    Verdict,
}

impl ParamType {
    fn describe(self) -> &'static str {
        match self {
            ParamType::Text => "text",
            ParamType::Integer => "integer",
            ParamType::CommitHash => "40-char commit hash",
            ParamType::Path => "repo-relative path",
            ParamType::Glob => "glob pattern",
            ParamType::Timestamp => "timestamp",
            ParamType::Verdict => "\"discard\" | \"preserve\"",
        }
    }

    fn json_schema(self, description: &str) -> Value {
        match self {
            ParamType::Integer => json!({"type": "integer", "minimum": 0, "description": description}),
            ParamType::Verdict => {
                json!({"type": "string", "enum": ["discard", "preserve"], "description": description})
            }
            _ => json!({"type": "string", "description": description}),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub ty: ParamType,
    pub required: bool,
    pub description: String,
}

impl ParamSpec {
    pub fn required(name: &str, ty: ParamType, description: &str) -> Self {
        Self {
            name: name.to_string(),
            ty,
            required: true,
            description: description.to_string(),
        }
    }

    pub fn optional(name: &str, ty: ParamType, description: &str) -> Self {
        Self {
            required: false,
            ..Self::required(name, ty, description)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ParamSpec>,
}

impl ToolSchema {
    pub fn new(name: &str, description: &str, parameters: Vec<ParamSpec>) -> Self {
        Self {
            name: name.to_string(),
            description: description.to_string(),
            parameters,
        }
    }

    /// Human-readable call signature, e.g. `commit_diff(commit_hash: 40-char commit hash)`.
    pub fn signature(&self) -> String {
        let params: Vec<String> = self
            .parameters
            .iter()
            .map(|p| {
                let opt = if p.required { "" } else { "?" };
                format!("{}{}: {}", p.name, opt, p.ty.describe())
            })
            .collect();
        format!("{}({})", self.name, params.join(", "))
    }

    /// The `function` object of a chat-completions tool declaration.
    pub fn to_function_declaration(&self) -> Value {
        let mut properties = Map::new();
        let mut required = Vec::new();
        for p in &self.parameters {
            properties.insert(p.name.clone(), p.ty.json_schema(&p.description));
            if p.required {
                required.push(Value::String(p.name.clone()));
            }
        }
        json!({
            "name": self.name,
            "description": self.description,
            "parameters": {
                "type": "object",
                "properties": properties,
                "required": required,
                "additionalProperties": false,
            }
        })
    }

    /// Checks presence, type and well-formedness of every argument.
    pub fn validate(&self, arguments: &Value) -> Result<(), String> {
        let map = match arguments {
            Value::Object(map) => map,
            Value::Null => return self.validate(&Value::Object(Map::new())),
            other => return Err(format!("arguments must be a JSON object, got `{other}`")),
        };
        for key in map.keys() {
            if !self.parameters.iter().any(|p| &p.name == key) {
                return Err(format!("unexpected argument `{key}`"));
            }
        }
        for p in &self.parameters {
            match map.get(&p.name) {
                None | Some(Value::Null) => {
                    if p.required {
                        return Err(format!("missing required argument `{}`", p.name));
                    }
                }
                Some(value) => check_type(&p.name, p.ty, value)?,
            }
        }
        Ok(())
    }
}

fn check_type(name: &str, ty: ParamType, value: &Value) -> Result<(), String> {
    match ty {
        ParamType::Integer => as_u64(value)
            .map(|_| ())
            .ok_or_else(|| format!("`{name}` must be a non-negative integer, got `{value}`")),
        ParamType::CommitHash => {
            let s = value
                .as_str()
                .ok_or_else(|| format!("`{name}` must be a string"))?;
            CommitHash::parse(s).map(|_| ()).map_err(|e| e.to_string())
        }
        ParamType::Timestamp => {
            let s = value
                .as_str()
                .map(str::to_string)
                .or_else(|| value.as_i64().map(|n| n.to_string()))
                .ok_or_else(|| format!("`{name}` must be a timestamp"))?;
            crate::domain::parse_time(&s).map(|_| ()).map_err(|e| e.to_string())
        }
        ParamType::Verdict => match value.as_str().map(str::to_ascii_lowercase).as_deref() {
            Some("discard") | Some("preserve") => Ok(()),
            _ => Err(format!("`{name}` must be \"discard\" or \"preserve\"")),
        },
        ParamType::Text | ParamType::Path | ParamType::Glob => match value.as_str() {
            Some(s) if !s.trim().is_empty() => Ok(()),
            Some(_) => Err(format!("`{name}` must not be empty")),
            None => Err(format!("`{name}` must be a string")),
        },
    }
}

fn as_u64(value: &Value) -> Option<u64> {
    match value {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub call_id: String,
    pub name: String,
    /// A JSON object; anything else is reported back as malformed.
    pub arguments: Value,
}

impl ToolCall {
    pub fn new(call_id: impl Into<String>, name: impl Into<String>, arguments: Value) -> Self {
        Self {
            call_id: call_id.into(),
            name: name.into(),
            arguments,
        }
    }

    pub fn args(&self) -> Args<'_> {
        Args::new(&self.arguments)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub call_id: String,
    pub payload: String,
    pub byte_size: usize,
    pub pruned: bool,
}

impl ToolResult {
    pub fn new(call_id: impl Into<String>, payload: impl Into<String>) -> Self {
        let payload = payload.into();
        Self {
            call_id: call_id.into(),
            byte_size: payload.len(),
            payload,
            pruned: false,
        }
    }

    pub fn is_error(&self) -> bool {
        self.payload.starts_with("error:")
    }
}

/// Extractor failures. All of them are rendered into the tool payload.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolError {
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Failed(String),
}

/// Typed accessors over a validated argument object.
#[derive(Debug, Clone, Copy)]
pub struct Args<'a> {
    map: Option<&'a Map<String, Value>>,
}

impl<'a> Args<'a> {
    pub fn new(value: &'a Value) -> Self {
        Self {
            map: value.as_object(),
        }
    }

    fn get(&self, name: &str) -> Option<&'a Value> {
        self.map.and_then(|m| m.get(name)).filter(|v| !v.is_null())
    }

    pub fn opt_str(&self, name: &str) -> Option<&'a str> {
        self.get(name).and_then(Value::as_str)
    }

    pub fn str(&self, name: &str) -> Result<&'a str, ToolError> {
        self.opt_str(name)
            .ok_or_else(|| ToolError::InvalidArguments(format!("missing `{name}`")))
    }

    pub fn opt_u64(&self, name: &str) -> Result<Option<u64>, ToolError> {
        match self.get(name) {
            None => Ok(None),
            Some(v) => as_u64(v).map(Some).ok_or_else(|| {
                ToolError::InvalidArguments(format!("`{name}` must be a non-negative integer"))
            }),
        }
    }

    pub fn u64(&self, name: &str) -> Result<u64, ToolError> {
        self.opt_u64(name)?
            .ok_or_else(|| ToolError::InvalidArguments(format!("missing `{name}`")))
    }

    pub fn hash(&self, name: &str) -> Result<CommitHash, ToolError> {
        CommitHash::parse(self.str(name)?).map_err(|e| ToolError::InvalidArguments(e.to_string()))
    }

    pub fn opt_time(&self, name: &str) -> Result<Option<Timestamp>, ToolError> {
        let raw = match self.get(name) {
            None => return Ok(None),
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            Some(other) => {
                return Err(ToolError::InvalidArguments(format!(
                    "`{name}` must be a timestamp, got `{other}`"
                )))
            }
        };
        crate::domain::parse_time(&raw)
            .map(Some)
            .map_err(|e| ToolError::InvalidArguments(e.to_string()))
    }

    /// `page` / `page_size` with the session default page size.
    pub fn pagination(&self, default_page_size: usize) -> Result<Pagination, ToolError> {
        let page = self.opt_u64("page")?.unwrap_or(0) as usize;
        let page_size = self
            .opt_u64("page_size")?
            .map(|n| n as usize)
            .unwrap_or(default_page_size);
        Pagination::new(page, page_size).map_err(|e| ToolError::InvalidArguments(e.to_string()))
    }
}

pub fn pagination_params() -> Vec<ParamSpec> {
    vec![
        ParamSpec::optional("page", ParamType::Integer, "0-based page number (default 0)"),
        ParamSpec::optional(
            "page_size",
            ParamType::Integer,
            &format!("items per page, 1..={MAX_PAGE_SIZE} (default {DEFAULT_PAGE_SIZE})"),
        ),
    ]
}

/// A data source that answers a fixed set of tools.
pub trait Extractor: Send + Sync {
    fn schemas(&self) -> Vec<ToolSchema>;

    /// Called only with arguments that passed schema validation.
    fn invoke(&self, tool: &str, args: Args<'_>) -> Result<String, ToolError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("tool `{name}` is already registered")]
    DuplicateTool { name: String },
}

struct Entry {
    schema: ToolSchema,
    /// `None` for tools the session loop handles itself (control tools).
    owner: Option<Arc<dyn Extractor>>,
}

/// Name → owning extractor. Immutable once a session starts.
#[derive(Default)]
pub struct SchemaRegistry {
    entries: Vec<Entry>,
    by_name: HashMap<String, usize>,
}

impl fmt::Debug for SchemaRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SchemaRegistry")
            .field("tools", &self.names())
            .finish()
    }
}

impl SchemaRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers every tool of `owner`. Atomic: on a collision nothing is added.
    pub fn register(&mut self, owner: Arc<dyn Extractor>) -> Result<(), RegistryError> {
        self.insert_all(owner.schemas(), Some(owner))
    }

    /// Declares tools without an owner; routing them yields an error payload.
    pub fn register_schema(&mut self, tools: Vec<ToolSchema>) -> Result<(), RegistryError> {
        self.insert_all(tools, None)
    }

    fn insert_all(
        &mut self,
        tools: Vec<ToolSchema>,
        owner: Option<Arc<dyn Extractor>>,
    ) -> Result<(), RegistryError> {
        let mut seen = std::collections::HashSet::new();
        for tool in &tools {
            if self.by_name.contains_key(&tool.name) || !seen.insert(tool.name.as_str()) {
                return Err(RegistryError::DuplicateTool {
                    name: tool.name.clone(),
                });
            }
        }
        for schema in tools {
            self.by_name.insert(schema.name.clone(), self.entries.len());
            self.entries.push(Entry {
                schema,
                owner: owner.clone(),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.schema.name.as_str()).collect()
    }

    pub fn schema(&self, name: &str) -> Option<&ToolSchema> {
        self.by_name.get(name).map(|&i| &self.entries[i].schema)
    }

    pub fn schemas(&self) -> impl Iterator<Item = &ToolSchema> {
        self.entries.iter().map(|e| &e.schema)
    }

    /// Chat-completions `tools` array.
    pub fn tool_declarations(&self) -> Value {
        Value::Array(
            self.schemas()
                .map(|s| json!({"type": "function", "function": s.to_function_declaration()}))
                .collect(),
        )
    }

    /// Validates a call against its schema; the error is the in-band payload.
    pub fn check_call(&self, call: &ToolCall) -> Result<&ToolSchema, String> {
        let schema = self.schema(&call.name).ok_or_else(|| self.unknown_tool_payload(&call.name))?;
        schema.validate(&call.arguments).map_err(|reason| {
            format!(
                "error: invalid arguments for {}: {reason}. Expected {}",
                schema.name,
                schema.signature()
            )
        })?;
        Ok(schema)
    }

    fn unknown_tool_payload(&self, name: &str) -> String {
        format!(
            "error: unknown tool `{name}`. Valid tools: {}",
            self.names().join(", ")
        )
    }

    /// Dispatches `call` to its owner. Total: always yields a result.
    pub fn route_call(&self, call: &ToolCall) -> ToolResult {
        let payload = match self.check_call(call) {
            Err(payload) => payload,
            Ok(schema) => match &self.entries[self.by_name[&schema.name]].owner {
                None => format!("error: `{}` is handled by the session, not routed", schema.name),
                Some(owner) => match owner.invoke(&call.name, call.args()) {
                    Ok(payload) => payload,
                    Err(ToolError::InvalidArguments(reason)) => format!(
                        "error: invalid arguments for {}: {reason}. Expected {}",
                        schema.name,
                        schema.signature()
                    ),
                    Err(err) => format!("error: {err}"),
                },
            },
        };
        ToolResult::new(call.call_id.clone(), payload)
    }
}

pub fn route_call(registry: &SchemaRegistry, call: &ToolCall) -> ToolResult {
    registry.route_call(call)
}

/// Schemas of the three control tools.
pub fn control_schemas() -> Vec<ToolSchema> {
    vec![
        ToolSchema::new(
            "finish",
            "Mark the commit as the one that finally resolved the issue and terminate. \
             The hash must be a full 40-character hash of a commit in this repository.",
            vec![ParamSpec::required(
                "commit_hash",
                ParamType::CommitHash,
                "full hash of the resolving commit",
            )],
        ),
        ToolSchema::new(
            "give_up",
            "Give up and terminate when the available data is insufficient to identify the commit.",
            vec![ParamSpec::optional("reason", ParamType::Text, "short explanation")],
        ),
        ToolSchema::new(
            "feedback",
            "Answer a feedback request on a large function result: `discard` replaces the result \
             with a short omitted notice, `preserve` keeps it in the conversation.",
            vec![
                ParamSpec::required("call_id", ParamType::Text, "id of the call whose result is judged"),
                ParamSpec::required("verdict", ParamType::Verdict, "discard or preserve"),
            ],
        ),
    ]
}
