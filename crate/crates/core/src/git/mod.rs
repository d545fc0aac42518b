//! Git functions over a local clone.
//!
//! All branches are presented as one history sorted by commit time, and the
//! batch queries are limited to the issue's safe lifespan. `list_commits`
//! accepts an explicit window to reach commits outside it.

mod history;
mod repo;

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use chrono::Duration;
use globset::{GlobBuilder, GlobMatcher};
use thiserror::Error;

pub use history::UnifiedHistory;
pub use repo::{mirror_path, RepoHandle};

use crate::domain::{
    Author, CommitDiff, CommitHash, CommitMeta, Pagination, TimeWindow, Timestamp,
    DEFAULT_PAGE_SIZE,
};
use crate::registry::{pagination_params, Args, Extractor, ParamSpec, ParamType, ToolError, ToolSchema};

pub const LIFESPAN_MARGIN_SECONDS: i64 = 7 * 86_400;

#[derive(Debug, Error)]
pub enum GitError {
    #[error("repository unavailable: {0}")]
    RepoUnavailable(String),
    #[error("clone failed: {0}")]
    Clone(String),
    #[error("commit not found: {0}")]
    CommitNotFound(CommitHash),
    #[error("invalid glob `{pattern}`: {reason}. Use `*` for any run of characters within one path segment, `?` for one character, `**` for any number of directories, e.g. `src/**/*.py`")]
    InvalidGlob { pattern: String, reason: String },
    #[error("git: {0}")]
    Git(#[from] git2::Error),
}

impl From<GitError> for ToolError {
    fn from(err: GitError) -> Self {
        match err {
            GitError::CommitNotFound(_) => ToolError::NotFound(err.to_string()),
            GitError::InvalidGlob { .. } => ToolError::InvalidArguments(err.to_string()),
            other => ToolError::Failed(other.to_string()),
        }
    }
}

/// `[created - 7d, closed + 7d]`; open issues end at `now`.
pub fn safe_lifespan(created_at: Timestamp, closed_at: Option<Timestamp>, now: Timestamp) -> TimeWindow {
    let margin = Duration::seconds(LIFESPAN_MARGIN_SECONDS);
    let start = created_at - margin;
    let end = match closed_at {
        Some(closed) => closed + margin,
        None => now.max(created_at),
    };
    TimeWindow::new(start, end.max(start)).expect("end clamped to start")
}

/// Author argument of `commits_of_author`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthorQuery {
    pub name: String,
    pub email: Option<String>,
}

impl AuthorQuery {
    pub fn name(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            email: None,
        }
    }

    pub fn exact(name: impl Into<String>, email: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            email: Some(email.into()),
        }
    }

    fn loosely_matches(&self, author: &Author) -> bool {
        let wanted = self.name.trim();
        if author.name.eq_ignore_ascii_case(wanted) {
            return true;
        }
        // Tracker usernames often equal the local part of the commit email.
        let local = author.email.split('@').next().unwrap_or("");
        !local.is_empty() && local.eq_ignore_ascii_case(wanted)
    }
}

pub struct GitExtractor {
    repo: Arc<RepoHandle>,
    history: Arc<UnifiedHistory>,
    lifespan: TimeWindow,
    default_page_size: usize,
    touched: Mutex<HashMap<usize, Arc<Vec<String>>>>,
}

impl std::fmt::Debug for GitExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GitExtractor")
            .field("repo", &self.repo)
            .field("commits", &self.history.len())
            .field("lifespan", &self.lifespan)
            .finish()
    }
}

impl GitExtractor {
    pub fn new(repo: Arc<RepoHandle>, lifespan: TimeWindow) -> Result<Self, GitError> {
        let history = UnifiedHistory::build(&repo.lock())?;
        Ok(Self::with_history(repo, Arc::new(history), lifespan))
    }

    pub fn with_history(repo: Arc<RepoHandle>, history: Arc<UnifiedHistory>, lifespan: TimeWindow) -> Self {
        Self {
            repo,
            history,
            lifespan,
            default_page_size: DEFAULT_PAGE_SIZE,
            touched: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_default_page_size(mut self, page_size: usize) -> Self {
        self.default_page_size = page_size;
        self
    }

    pub fn history(&self) -> &Arc<UnifiedHistory> {
        &self.history
    }

    pub fn repo(&self) -> &Arc<RepoHandle> {
        &self.repo
    }

    pub fn lifespan(&self) -> TimeWindow {
        self.lifespan
    }

    fn in_lifespan(&self) -> std::ops::Range<usize> {
        self.history.window_range(&self.lifespan)
    }

    fn page_of(&self, positions: impl Iterator<Item = usize>, p: Pagination) -> Vec<CommitMeta> {
        let all: Vec<usize> = positions.collect();
        p.slice(&all)
            .iter()
            .map(|&i| self.history.commits()[i].clone())
            .collect()
    }

    pub fn list_commits(&self, p: Pagination, window: Option<TimeWindow>) -> Vec<CommitMeta> {
        let range = self.history.window_range(&window.unwrap_or(self.lifespan));
        p.slice(&self.history.commits()[range]).to_vec()
    }

    pub fn count_commits(&self, window: Option<TimeWindow>) -> usize {
        self.history.window_range(&window.unwrap_or(self.lifespan)).len()
    }

    /// Distinct (name, email) identities in the lifespan, sorted by name.
    pub fn list_authors(&self) -> Vec<Author> {
        let set: BTreeSet<(String, String)> = self.history.commits()[self.in_lifespan()]
            .iter()
            .map(|c| c.author.git_key())
            .collect();
        set.into_iter().map(|(name, email)| Author::git(name, email)).collect()
    }

    fn author_positions(&self, query: &AuthorQuery) -> Vec<usize> {
        let range = self.in_lifespan();
        if let Some(email) = query.email.as_deref().filter(|e| !e.is_empty()) {
            let exact: Vec<usize> = self
                .history
                .positions_of_author(&query.name, email)
                .iter()
                .copied()
                .filter(|i| range.contains(i))
                .collect();
            if !exact.is_empty() {
                return exact;
            }
        }
        range
            .filter(|&i| query.loosely_matches(&self.history.commits()[i].author))
            .collect()
    }

    pub fn commits_of_author(&self, query: &AuthorQuery, p: Pagination) -> Vec<CommitMeta> {
        self.page_of(self.author_positions(query).into_iter(), p)
    }

    /// Paths staged by commit at `pos` (both names for renames).
    fn touched_paths(&self, pos: usize) -> Result<Arc<Vec<String>>, GitError> {
        if let Some(hit) = self.touched.lock().unwrap_or_else(|p| p.into_inner()).get(&pos) {
            return Ok(hit.clone());
        }
        let hash = &self.history.commits()[pos].hash;
        let files = history::diff_commit(&self.repo.lock(), hash, false)?;
        let mut paths: Vec<String> = files
            .iter()
            .flat_map(|f| f.touched_paths().map(str::to_string))
            .collect();
        paths.sort();
        paths.dedup();
        let paths = Arc::new(paths);
        self.touched
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(pos, paths.clone());
        Ok(paths)
    }

    pub fn compile_glob(pattern: &str) -> Result<GlobMatcher, GitError> {
        if pattern.trim().is_empty() {
            return Err(GitError::InvalidGlob {
                pattern: pattern.to_string(),
                reason: "pattern is empty".into(),
            });
        }
        GlobBuilder::new(pattern.trim())
            .literal_separator(true)
            .build()
            .map(|g| g.compile_matcher())
            .map_err(|e| GitError::InvalidGlob {
                pattern: pattern.to_string(),
                reason: e.kind().to_string(),
            })
    }

    pub fn list_files(&self, pattern: &str) -> Result<Vec<String>, GitError> {
        let matcher = Self::compile_glob(pattern)?;
        let mut paths = BTreeSet::new();
        for pos in self.in_lifespan() {
            for path in self.touched_paths(pos)?.iter() {
                if matcher.is_match(path) {
                    paths.insert(path.clone());
                }
            }
        }
        Ok(paths.into_iter().collect())
    }

    pub fn commits_on_file(&self, file: &str, p: Pagination) -> Result<Vec<CommitMeta>, GitError> {
        let file = file.trim().trim_start_matches("./");
        let mut positions = Vec::new();
        for pos in self.in_lifespan() {
            if self.touched_paths(pos)?.iter().any(|f| f == file) {
                positions.push(pos);
            }
        }
        Ok(self.page_of(positions.into_iter(), p))
    }

    pub fn commit_diff(&self, hash: &CommitHash) -> Result<CommitDiff, GitError> {
        if !self.history.contains(hash) {
            return Err(GitError::CommitNotFound(hash.clone()));
        }
        let files = history::diff_commit(&self.repo.lock(), hash, true)?;
        Ok(CommitDiff {
            commit_hash: hash.clone(),
            files,
        })
    }

    pub fn commit_metadata(&self, hash: &CommitHash) -> Result<CommitMeta, GitError> {
        self.history
            .get(hash)
            .cloned()
            .ok_or_else(|| GitError::CommitNotFound(hash.clone()))
    }
}

fn render_commits(commits: &[CommitMeta], p: Pagination, scope: &str) -> String {
    if commits.is_empty() {
        return format!(
            "no commits on page {} (page_size {}) {scope}",
            p.page, p.page_size
        );
    }
    let mut out = format!(
        "{} commits on page {} (page_size {}) {scope}\n",
        commits.len(),
        p.page,
        p.page_size
    );
    for c in commits {
        out.push_str(&c.render());
        out.push('\n');
    }
    out
}

impl Extractor for GitExtractor {
    fn schemas(&self) -> Vec<ToolSchema> {
        let lifespan = self.lifespan.to_string();
        let mut list_commits = pagination_params();
        list_commits.push(ParamSpec::optional(
            "since",
            ParamType::Timestamp,
            "window start (RFC 3339 or YYYY-MM-DD); defaults to the safe lifespan",
        ));
        list_commits.push(ParamSpec::optional(
            "until",
            ParamType::Timestamp,
            "window end (RFC 3339 or YYYY-MM-DD); defaults to the safe lifespan",
        ));
        let mut of_author = vec![
            ParamSpec::required("name", ParamType::Text, "author name or tracker username"),
            ParamSpec::optional("email", ParamType::Text, "author email for an exact match"),
        ];
        of_author.extend(pagination_params());
        let mut on_file = vec![ParamSpec::required(
            "file_name",
            ParamType::Path,
            "repo-relative path as returned by list_files",
        )];
        on_file.extend(pagination_params());
        let hash = || vec![ParamSpec::required("commit_hash", ParamType::CommitHash, "full commit hash")];
        vec![
            ToolSchema::new(
                "list_commits",
                &format!(
                    "Returns paginated commits of all branches merged into one history ordered by \
                     commit time. Defaults to the issue's safe lifespan ({lifespan}); pass since/until \
                     to look outside it."
                ),
                list_commits,
            ),
            ToolSchema::new(
                "list_authors",
                &format!("Returns the list of commit authors within the safe lifespan ({lifespan})."),
                vec![],
            ),
            ToolSchema::new(
                "commits_of_author",
                "Returns paginated commits authored by the specified author within the safe lifespan. \
                 Name matching is case-insensitive and also accepts the email user part.",
                of_author,
            ),
            ToolSchema::new(
                "list_files",
                "Returns files staged by commits within the safe lifespan that match the glob pattern \
                 (`*` within a path segment, `**` across directories).",
                vec![ParamSpec::required("pattern", ParamType::Glob, "glob such as `src/**/*.py`")],
            ),
            ToolSchema::new(
                "commits_on_file",
                "Returns paginated commits within the safe lifespan that staged the specified file \
                 (renames count for both names).",
                on_file,
            ),
            ToolSchema::new(
                "commit_diff",
                "Returns the diff of the specified commit against its first parent \
                 (merge commits are diffed against the first parent only).",
                hash(),
            ),
            ToolSchema::new(
                "commit_metadata",
                "Returns metadata of the commit: author, committer, message, and timestamps.",
                hash(),
            ),
        ]
    }

    fn invoke(&self, tool: &str, args: Args<'_>) -> Result<String, ToolError> {
        match tool {
            "list_commits" => {
                let p = args.pagination(self.default_page_size)?;
                let since = args.opt_time("since")?;
                let until = args.opt_time("until")?;
                let window = if since.is_none() && until.is_none() {
                    None
                } else {
                    let unbounded = TimeWindow::unbounded();
                    Some(
                        TimeWindow::new(since.unwrap_or(unbounded.start), until.unwrap_or(unbounded.end))
                            .map_err(|e| ToolError::InvalidArguments(e.to_string()))?,
                    )
                };
                let total = self.count_commits(window);
                let scope = match window {
                    None => format!("in safe lifespan {}; {total} total", self.lifespan),
                    Some(w) => format!("in window {w}; {total} total"),
                };
                Ok(render_commits(&self.list_commits(p, window), p, &scope))
            }
            "list_authors" => {
                let authors = self.list_authors();
                if authors.is_empty() {
                    return Ok("no authors in the safe lifespan".into());
                }
                Ok(authors
                    .iter()
                    .map(|a| format!("author {}\n", a.render()))
                    .collect())
            }
            "commits_of_author" => {
                let query = AuthorQuery {
                    name: args.str("name")?.to_string(),
                    email: args.opt_str("email").map(str::to_string),
                };
                let p = args.pagination(self.default_page_size)?;
                let commits = self.commits_of_author(&query, p);
                Ok(render_commits(&commits, p, &format!("by {} in safe lifespan", query.name)))
            }
            "list_files" => {
                let files = self.list_files(args.str("pattern")?)?;
                if files.is_empty() {
                    return Ok("no files match in the safe lifespan".into());
                }
                Ok(files.iter().map(|f| format!("{f}\n")).collect())
            }
            "commits_on_file" => {
                let file = args.str("file_name")?;
                let p = args.pagination(self.default_page_size)?;
                let commits = self.commits_on_file(file, p)?;
                Ok(render_commits(&commits, p, &format!("touching {file} in safe lifespan")))
            }
            "commit_diff" => Ok(self.commit_diff(&args.hash("commit_hash")?)?.render()),
            "commit_metadata" => Ok(self.commit_metadata(&args.hash("commit_hash")?)?.render()),
            other => Err(ToolError::Failed(format!("git extractor has no tool `{other}`"))),
        }
    }
}
