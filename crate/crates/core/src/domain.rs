//! Shared value types: commits, authors, diffs, pagination, time windows,
//! budgets and session outcomes.
//!
//! Every type that is handed back to the model has a compact line-oriented
//! rendering (one record per line, labeled fields) so tool payloads stay
//! small.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Timestamp = DateTime<Utc>;

pub const DEFAULT_PAGE_SIZE: usize = 20;
pub const MAX_PAGE_SIZE: usize = 100;

pub const DEFAULT_MAX_ITERATIONS: u32 = 20;
pub const DEFAULT_MAX_TOTAL_TOKENS: u64 = 200_000;
pub const DEFAULT_FEEDBACK_THRESHOLD_BYTES: usize = 40_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("`{0}` is not a 40-character hexadecimal commit hash")]
    InvalidHash(String),
    #[error("page_size must be between 1 and {MAX_PAGE_SIZE}, got {0}")]
    InvalidPageSize(usize),
    #[error("time window start {start} is after end {end}")]
    InvertedWindow { start: Timestamp, end: Timestamp },
    #[error("budget `{0}` must be positive")]
    NonPositiveBudget(&'static str),
    #[error("invalid timestamp `{0}`")]
    InvalidTimestamp(String),
}

/// A full 40-character lowercase hex object id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CommitHash(String);

impl CommitHash {
    /// Accepts upper or lower case hex; the stored form is lowercase.
    pub fn parse(raw: &str) -> Result<Self, DomainError> {
        let trimmed = raw.trim();
        if trimmed.len() == 40 && trimmed.bytes().all(|b| b.is_ascii_hexdigit()) {
            Ok(Self(trimmed.to_ascii_lowercase()))
        } else {
            Err(DomainError::InvalidHash(raw.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn short(&self) -> &str {
        &self.0[..10]
    }
}

impl fmt::Display for CommitHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for CommitHash {
    type Err = DomainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl TryFrom<String> for CommitHash {
    type Error = DomainError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::parse(&value)
    }
}

impl From<CommitHash> for String {
    fn from(value: CommitHash) -> Self {
        value.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Author {
    pub name: String,
    pub email: String,
    pub tracker_username: Option<String>,
}

impl Author {
    pub fn git(name: impl Into<String>, email: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            email: email.into(),
            tracker_username: None,
        }
    }

    pub fn tracker(username: impl Into<String>, display_name: impl Into<String>) -> Self {
        let username = username.into();
        let display_name = display_name.into();
        Self {
            name: if display_name.is_empty() {
                username.clone()
            } else {
                display_name
            },
            email: String::new(),
            tracker_username: Some(username),
        }
    }

    /// Identity for git authors.
    pub fn git_key(&self) -> (String, String) {
        (self.name.clone(), self.email.clone())
    }

    /// Identity for tracker users; falls back to the display name.
    pub fn tracker_key(&self) -> &str {
        self.tracker_username.as_deref().unwrap_or(&self.name)
    }

    pub fn render(&self) -> String {
        match (&self.tracker_username, self.email.is_empty()) {
            (Some(user), _) if *user == self.name => user.clone(),
            (Some(user), _) => format!("{user} ({})", self.name),
            (None, true) => self.name.clone(),
            (None, false) => format!("{} <{}>", self.name, self.email),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitMeta {
    pub hash: CommitHash,
    pub author: Author,
    pub committer: Author,
    pub message: String,
    pub author_time: Timestamp,
    pub commit_time: Timestamp,
}

impl CommitMeta {
    /// Sort key of the unified history.
    pub fn order_key(&self) -> (Timestamp, &CommitHash) {
        (self.commit_time, &self.hash)
    }

    pub fn render(&self) -> String {
        format!(
            "commit {} | author {} | committer {} | authored {} | committed {} | message {}",
            self.hash,
            self.author.render(),
            self.committer.render(),
            format_time(&self.author_time),
            format_time(&self.commit_time),
            escape_newlines(self.message.trim_end()),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Added,
    Modified,
    Deleted,
    Renamed,
}

impl ChangeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChangeKind::Added => "added",
            ChangeKind::Modified => "modified",
            ChangeKind::Deleted => "deleted",
            ChangeKind::Renamed => "renamed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDiff {
    pub path: String,
    /// Set for renames only.
    pub old_path: Option<String>,
    pub change_kind: ChangeKind,
    pub hunks: Vec<String>,
}

impl FileDiff {
    /// Every path this change stages: the new name and, for renames, the old one.
    pub fn touched_paths(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.path.as_str()).chain(self.old_path.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitDiff {
    pub commit_hash: CommitHash,
    pub files: Vec<FileDiff>,
}

impl CommitDiff {
    pub fn render(&self) -> String {
        let mut out = format!("diff of {} ({} files)\n", self.commit_hash, self.files.len());
        for file in &self.files {
            match &file.old_path {
                Some(old) => out.push_str(&format!("--- {} {} -> {}\n", file.change_kind.as_str(), old, file.path)),
                None => out.push_str(&format!("--- {} {}\n", file.change_kind.as_str(), file.path)),
            }
            for hunk in &file.hunks {
                out.push_str(hunk);
                if !hunk.ends_with('\n') {
                    out.push('\n');
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pagination {
    pub page: usize,
    pub page_size: usize,
}

impl Default for Pagination {
    fn default() -> Self {
        Self {
            page: 0,
            page_size: DEFAULT_PAGE_SIZE,
        }
    }
}

impl Pagination {
    pub fn new(page: usize, page_size: usize) -> Result<Self, DomainError> {
        if page_size == 0 || page_size > MAX_PAGE_SIZE {
            return Err(DomainError::InvalidPageSize(page_size));
        }
        Ok(Self { page, page_size })
    }

    /// The slice of `items` on this page; past-the-end pages are empty.
    pub fn slice<'a, T>(&self, items: &'a [T]) -> &'a [T] {
        let start = self.page.saturating_mul(self.page_size);
        if start >= items.len() {
            return &[];
        }
        let end = start.saturating_add(self.page_size).min(items.len());
        &items[start..end]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl TimeWindow {
    pub fn new(start: Timestamp, end: Timestamp) -> Result<Self, DomainError> {
        if start > end {
            return Err(DomainError::InvertedWindow { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn unbounded() -> Self {
        Self {
            start: DateTime::<Utc>::MIN_UTC,
            end: DateTime::<Utc>::MAX_UTC,
        }
    }

    pub fn contains(&self, t: &Timestamp) -> bool {
        self.start <= *t && *t <= self.end
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} .. {}", format_time(&self.start), format_time(&self.end))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budgets {
    pub max_iterations: u32,
    pub max_total_tokens: u64,
    pub feedback_threshold_bytes: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            max_total_tokens: DEFAULT_MAX_TOTAL_TOKENS,
            feedback_threshold_bytes: DEFAULT_FEEDBACK_THRESHOLD_BYTES,
        }
    }
}

impl Budgets {
    pub fn new(
        max_iterations: u32,
        max_total_tokens: u64,
        feedback_threshold_bytes: usize,
    ) -> Result<Self, DomainError> {
        if max_iterations == 0 {
            return Err(DomainError::NonPositiveBudget("max_iterations"));
        }
        if max_total_tokens == 0 {
            return Err(DomainError::NonPositiveBudget("max_total_tokens"));
        }
        if feedback_threshold_bytes == 0 {
            return Err(DomainError::NonPositiveBudget("feedback_threshold_bytes"));
        }
        Ok(Self {
            max_iterations,
            max_total_tokens,
            feedback_threshold_bytes,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExhaustedBudget {
    Iterations,
    Tokens,
}

impl ExhaustedBudget {
    pub fn as_str(self) -> &'static str {
        match self {
            ExhaustedBudget::Iterations => "iterations",
            ExhaustedBudget::Tokens => "tokens",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Finished,
    GaveUp,
    BudgetExhausted,
}

impl OutcomeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeKind::Finished => "finished",
            OutcomeKind::GaveUp => "gave_up",
            OutcomeKind::BudgetExhausted => "budget_exhausted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionOutcome {
    Finished(CommitHash),
    GaveUp { reason: String },
    BudgetExhausted(ExhaustedBudget),
}

impl SessionOutcome {
    pub fn kind(&self) -> OutcomeKind {
        match self {
            SessionOutcome::Finished(_) => OutcomeKind::Finished,
            SessionOutcome::GaveUp { .. } => OutcomeKind::GaveUp,
            SessionOutcome::BudgetExhausted(_) => OutcomeKind::BudgetExhausted,
        }
    }

    pub fn commit(&self) -> Option<&CommitHash> {
        match self {
            SessionOutcome::Finished(hash) => Some(hash),
            _ => None,
        }
    }

    pub fn reason(&self) -> Option<String> {
        match self {
            SessionOutcome::Finished(_) => None,
            SessionOutcome::GaveUp { reason } => Some(reason.clone()),
            SessionOutcome::BudgetExhausted(budget) => Some(budget.as_str().to_string()),
        }
    }
}

pub fn format_time(t: &Timestamp) -> String {
    t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn from_unix(seconds: i64) -> Timestamp {
    Utc.timestamp_opt(seconds, 0)
        .single()
        .unwrap_or(DateTime::<Utc>::MIN_UTC)
}

/// Parses RFC 3339, `YYYY-MM-DD`, or unix seconds.
pub fn parse_time(raw: &str) -> Result<Timestamp, DomainError> {
    let raw = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Ok(t.with_timezone(&Utc));
    }
    if let Ok(d) = chrono::NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
        if let Some(dt) = d.and_hms_opt(0, 0, 0) {
            return Ok(dt.and_utc());
        }
    }
    if let Ok(secs) = raw.parse::<i64>() {
        return Ok(from_unix(secs));
    }
    Err(DomainError::InvalidTimestamp(raw.to_string()))
}

pub(crate) fn escape_newlines(text: &str) -> String {
    text.replace('\r', "").replace('\n', "\\n")
}
