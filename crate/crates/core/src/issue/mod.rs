//! Issue functions over a snapshot fetched once at session start.

pub(crate) mod github;
pub(crate) mod jira;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{escape_newlines, format_time, Author, Pagination, Timestamp, DEFAULT_PAGE_SIZE};
use crate::http::{HttpTransport, RetryPolicy, SendError, TransportError};
use crate::registry::{pagination_params, Args, Extractor, ToolError, ToolSchema};

pub const UNRESOLVED: &str = "unresolved";

#[derive(Debug, Error)]
pub enum IssueError {
    #[error("unrecognized issue URL `{0}`: expected https://<host>/<owner>/<repo>/issues/<n> or https://<host>/browse/<KEY-123>")]
    UnrecognizedUrl(String),
    #[error("issue not found: {0}")]
    NotFound(String),
    #[error("{url}: rate limited or unavailable after retries ({source})")]
    Unavailable { url: String, source: SendError },
    #[error("{url}: unexpected HTTP status {status}")]
    Status { url: String, status: u16 },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("{url}: malformed response: {reason}")]
    Malformed { url: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Platform {
    Github,
    Jira,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentMeta {
    pub author: Author,
    pub body: String,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueSnapshot {
    pub platform: Platform,
    pub key: String,
    pub url: String,
    pub title: String,
    pub description: String,
    pub created_at: Timestamp,
    pub closed_at: Option<Timestamp>,
    pub author: Author,
    /// Chronological.
    pub comments: Vec<CommentMeta>,
}

impl IssueSnapshot {
    pub(crate) fn sort_comments(&mut self) {
        self.comments.sort_by_key(|c| c.created_at);
    }
}

/// Where an issue URL points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IssueRef {
    Github {
        api_base: String,
        owner: String,
        repo: String,
        number: u64,
    },
    Jira {
        base: String,
        key: String,
    },
}

pub fn parse_issue_url(raw: &str) -> Result<IssueRef, IssueError> {
    let unrecognized = || IssueError::UnrecognizedUrl(raw.to_string());
    let url = reqwest::Url::parse(raw.trim()).map_err(|_| unrecognized())?;
    if !matches!(url.scheme(), "http" | "https") {
        return Err(unrecognized());
    }
    let host = url.host_str().ok_or_else(unrecognized)?.to_string();
    let origin = match url.port() {
        Some(port) => format!("{}://{host}:{port}", url.scheme()),
        None => format!("{}://{host}", url.scheme()),
    };
    let segments: Vec<&str> = url
        .path_segments()
        .map(|s| s.filter(|seg| !seg.is_empty()).collect())
        .unwrap_or_default();

    if let Some(i) = segments.iter().position(|s| *s == "browse") {
        if let Some(key) = segments.get(i + 1).filter(|k| is_jira_key(k)) {
            let prefix = segments[..i].join("/");
            let base = if prefix.is_empty() {
                origin
            } else {
                format!("{origin}/{prefix}")
            };
            return Ok(IssueRef::Jira {
                base,
                key: key.to_string(),
            });
        }
    }
    if segments.len() >= 4 {
        let n = segments.len();
        // Allow a path prefix (GitHub Enterprise behind a sub-path) but the tail is fixed.
        if let Some(idx) = (0..=n - 4).rev().find(|&i| segments[i + 2] == "issues") {
            if let Ok(number) = segments[idx + 3].parse::<u64>() {
                let api_base = if host == "github.com" || host == "www.github.com" {
                    "https://api.github.com".to_string()
                } else {
                    format!("{origin}/api/v3")
                };
                return Ok(IssueRef::Github {
                    api_base,
                    owner: segments[idx].to_string(),
                    repo: segments[idx + 1].to_string(),
                    number,
                });
            }
        }
    }
    Err(unrecognized())
}

fn is_jira_key(s: &str) -> bool {
    match s.split_once('-') {
        Some((project, num)) => {
            !project.is_empty()
                && project.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
                && project.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                && !num.is_empty()
                && num.chars().all(|c| c.is_ascii_digit())
        }
        None => false,
    }
}

/// Tracker credentials, read from the environment only.
#[derive(Debug, Clone, Default)]
pub struct TrackerAuth {
    pub github_token: Option<String>,
    pub jira_bearer: Option<String>,
    pub jira_basic: Option<(String, String)>,
}

impl TrackerAuth {
    /// `GITHUB_TOKEN`; `JIRA_TOKEN` (bearer) or `JIRA_USER` + `JIRA_API_TOKEN` (basic).
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        Self {
            github_token: var("GITHUB_TOKEN"),
            jira_bearer: var("JIRA_TOKEN"),
            jira_basic: var("JIRA_USER").zip(var("JIRA_API_TOKEN")),
        }
    }
}

pub struct IssueClient {
    transport: Arc<dyn HttpTransport>,
    auth: TrackerAuth,
    retry: RetryPolicy,
}

impl IssueClient {
    pub fn new(transport: Arc<dyn HttpTransport>, auth: TrackerAuth, retry: RetryPolicy) -> Self {
        Self { transport, auth, retry }
    }

    /// Fetches the issue and every comment page.
    pub fn fetch_issue(&self, url: &str) -> Result<IssueSnapshot, IssueError> {
        let mut snapshot = match parse_issue_url(url)? {
            IssueRef::Github {
                api_base,
                owner,
                repo,
                number,
            } => github::fetch(self, &api_base, &owner, &repo, number)?,
            IssueRef::Jira { base, key } => jira::fetch(self, &base, &key)?,
        };
        snapshot.url = url.trim().to_string();
        snapshot.sort_comments();
        Ok(snapshot)
    }

    pub(crate) fn get_json(
        &self,
        request: crate::http::HttpRequest,
    ) -> Result<serde_json::Value, IssueError> {
        let url = request.url.clone();
        let response = crate::http::send_with_retry(self.transport.as_ref(), &request, &self.retry, |r| {
            r.status == 429
                || r.status >= 500
                || (r.status == 403 && r.header("x-ratelimit-remaining") == Some("0"))
        })
        .map_err(|e| match e {
            SendError::Transport(t) => IssueError::Transport(t),
            other => IssueError::Unavailable {
                url: url.clone(),
                source: other,
            },
        })?;
        match response.status {
            404 | 410 => return Err(IssueError::NotFound(url)),
            s if !(200..300).contains(&s) => return Err(IssueError::Status { url, status: s }),
            _ => {}
        }
        serde_json::from_str(&response.body).map_err(|e| IssueError::Malformed {
            url,
            reason: e.to_string(),
        })
    }

    pub(crate) fn auth(&self) -> &TrackerAuth {
        &self.auth
    }
}

/// Pure reads over one snapshot.
#[derive(Debug, Clone)]
pub struct IssueExtractor {
    snapshot: Arc<IssueSnapshot>,
    default_page_size: usize,
}

impl IssueExtractor {
    pub fn new(snapshot: Arc<IssueSnapshot>) -> Self {
        Self {
            snapshot,
            default_page_size: DEFAULT_PAGE_SIZE,
        }
    }

    pub fn with_default_page_size(mut self, page_size: usize) -> Self {
        self.default_page_size = page_size;
        self
    }

    pub fn snapshot(&self) -> &IssueSnapshot {
        &self.snapshot
    }

    pub fn issue_title(&self) -> &str {
        &self.snapshot.title
    }

    pub fn issue_description(&self) -> &str {
        &self.snapshot.description
    }

    pub fn issue_created_at(&self) -> Timestamp {
        self.snapshot.created_at
    }

    pub fn issue_closed_at(&self) -> Option<Timestamp> {
        self.snapshot.closed_at
    }

    pub fn issue_author(&self) -> &Author {
        &self.snapshot.author
    }

    pub fn issue_comments(&self, p: Pagination) -> &[CommentMeta] {
        p.slice(&self.snapshot.comments)
    }

    /// Issue author plus every commenter, deduplicated and sorted by username.
    pub fn issue_participants(&self) -> Vec<Author> {
        let mut people: Vec<Author> = std::iter::once(&self.snapshot.author)
            .chain(self.snapshot.comments.iter().map(|c| &c.author))
            .cloned()
            .collect();
        people.sort_by(|a, b| a.tracker_key().cmp(b.tracker_key()));
        people.dedup_by(|a, b| a.tracker_key() == b.tracker_key());
        people
    }
}

impl Extractor for IssueExtractor {
    fn schemas(&self) -> Vec<ToolSchema> {
        vec![
            ToolSchema::new("issue_title", "Returns the title of the current issue.", vec![]),
            ToolSchema::new("issue_description", "Returns the description of the issue.", vec![]),
            ToolSchema::new("issue_created_at", "Returns the issue creation timestamp.", vec![]),
            ToolSchema::new(
                "issue_closed_at",
                "Returns the issue resolution timestamp, or `unresolved` for open issues.",
                vec![],
            ),
            ToolSchema::new("issue_author", "Returns the username of the issue author.", vec![]),
            ToolSchema::new(
                "issue_comments",
                "Returns paginated comments on the issue in chronological order.",
                pagination_params(),
            ),
            ToolSchema::new(
                "issue_participants",
                "Returns the users who participated in the issue thread (author and commenters).",
                vec![],
            ),
        ]
    }

    fn invoke(&self, tool: &str, args: Args<'_>) -> Result<String, ToolError> {
        Ok(match tool {
            "issue_title" => self.issue_title().to_string(),
            "issue_description" => self.issue_description().to_string(),
            "issue_created_at" => format_time(&self.issue_created_at()),
            "issue_closed_at" => self
                .issue_closed_at()
                .map(|t| format_time(&t))
                .unwrap_or_else(|| UNRESOLVED.to_string()),
            "issue_author" => self.issue_author().render(),
            "issue_comments" => {
                let p = args.pagination(self.default_page_size)?;
                let page = self.issue_comments(p);
                let total = self.snapshot.comments.len();
                if page.is_empty() {
                    format!("no comments on page {} (page_size {}); {total} total", p.page, p.page_size)
                } else {
                    let first = p.page * p.page_size;
                    let mut out = format!(
                        "{} comments on page {} (page_size {}); {total} total\n",
                        page.len(),
                        p.page,
                        p.page_size
                    );
                    for (i, c) in page.iter().enumerate() {
                        out.push_str(&format!(
                            "comment {} | author {} | at {} | body {}\n",
                            first + i + 1,
                            c.author.render(),
                            format_time(&c.created_at),
                            escape_newlines(&c.body)
                        ));
                    }
                    out
                }
            }
            "issue_participants" => self
                .issue_participants()
                .iter()
                .map(|a| format!("participant {}\n", a.render()))
                .collect(),
            other => return Err(ToolError::Failed(format!("issue extractor has no tool `{other}`"))),
        })
    }
}
