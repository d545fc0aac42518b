//! The session loop: asks the model for the next action, executes the calls,
//! and stops on finish, give_up, or an exhausted budget.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::code::{CodeError, CodeNavigator, ProfileSet};
use crate::domain::{Budgets, ExhaustedBudget, SessionOutcome, Timestamp, DEFAULT_PAGE_SIZE};
use crate::git::{safe_lifespan, GitError, GitExtractor, RepoHandle, UnifiedHistory};
use crate::issue::{IssueClient, IssueError, IssueExtractor, IssueSnapshot};
use crate::llm::{
    build_initial_prompt, next_action, BackendError, ChatBackend, Conversation, Verdict, DEFAULT_MODEL,
};
use crate::registry::{control_schemas, RegistryError, SchemaRegistry, ToolCall, ToolResult};

const FREE_TEXT_NOTICE: &str = "Reply with a function call. Keep investigating with the \
     available functions, then call `finish` with the resolving commit hash or `give_up`.";

/// Wall-clock source. Tests freeze it so session records are reproducible.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
    /// Seconds since an arbitrary fixed origin.
    fn monotonic_seconds(&self) -> f64;
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        chrono::Utc::now()
    }

    fn monotonic_seconds(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }
}

/// A clock that never moves.
#[derive(Debug, Clone, Copy)]
pub struct FrozenClock(pub Timestamp);

impl Clock for FrozenClock {
    fn now(&self) -> Timestamp {
        self.0
    }

    fn monotonic_seconds(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("repository: {0}")]
    Repo(#[from] GitError),
    #[error("issue: {0}")]
    Issue(#[from] IssueError),
    #[error("code navigation: {0}")]
    Code(#[from] CodeError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("model backend: {0}")]
    Backend(#[from] BackendError),
}

impl SessionError {
    /// Failures raised before any model traffic.
    pub fn is_setup(&self) -> bool {
        !matches!(self, SessionError::Backend(_))
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub budgets: Budgets,
    pub model: String,
    pub page_size: usize,
    /// Where remote repositories are mirrored.
    pub cache_dir: PathBuf,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            budgets: Budgets::default(),
            model: DEFAULT_MODEL.to_string(),
            page_size: DEFAULT_PAGE_SIZE,
            cache_dir: std::env::temp_dir().join("commitlink-repos"),
        }
    }
}

/// Everything a session reads: the issue snapshot, the repository, and the
/// registry of the 20 functions built over them.
pub struct Workspace {
    pub issue: Arc<IssueSnapshot>,
    pub repo: Arc<RepoHandle>,
    pub history: Arc<UnifiedHistory>,
    pub registry: SchemaRegistry,
}

impl Workspace {
    pub fn new(
        issue: IssueSnapshot,
        repo: Arc<RepoHandle>,
        history: Arc<UnifiedHistory>,
        profiles: Arc<ProfileSet>,
        page_size: usize,
        now: Timestamp,
    ) -> Result<Self, SessionError> {
        let issue = Arc::new(issue);
        let lifespan = safe_lifespan(issue.created_at, issue.closed_at, now);
        let git = GitExtractor::with_history(repo.clone(), history.clone(), lifespan).with_default_page_size(page_size);
        let mut registry = SchemaRegistry::new();
        registry.register(Arc::new(git))?;
        registry.register(Arc::new(IssueExtractor::new(issue.clone()).with_default_page_size(page_size)))?;
        registry.register(Arc::new(CodeNavigator::new(repo.clone(), profiles)))?;
        registry.register_schema(control_schemas())?;
        Ok(Self {
            issue,
            repo,
            history,
            registry,
        })
    }

    /// Fetches the issue and opens (or mirrors) the repository.
    pub fn open(
        client: &IssueClient,
        issue_url: &str,
        repo_source: &str,
        config: &SessionConfig,
        now: Timestamp,
    ) -> Result<Self, SessionError> {
        let repo = Arc::new(RepoHandle::open_source(repo_source, &config.cache_dir)?);
        let history = Arc::new(UnifiedHistory::build(&repo.lock())?);
        let issue = client.fetch_issue(issue_url)?;
        let profiles = Arc::new(ProfileSet::builtin()?);
        Self::new(issue, repo, history, profiles, config.page_size, now)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub iteration: u32,
    pub call_id: String,
    pub name: String,
    pub arguments: serde_json::Value,
    /// Size of the result before any feedback request was appended.
    pub byte_size: usize,
    /// Set on `feedback` calls that applied a verdict.
    pub verdict: Option<Verdict>,
    /// sha256 of the result payload as first returned.
    pub payload_sha256: String,
}

#[derive(Debug, Clone)]
pub struct SessionState {
    pub iteration: u32,
    pub conversation: Conversation,
    pub call_log: Vec<CallRecord>,
    /// Calls whose feedback request went unanswered and were discarded.
    pub auto_discarded: Vec<String>,
    pub outcome: Option<SessionOutcome>,
    pub wall_time_s: f64,
    /// Ledger total after each iteration.
    pub ledger_trace: Vec<u64>,
}

impl SessionState {
    pub fn total_tokens(&self) -> u64 {
        self.conversation.ledger().cumulative_total()
    }

    fn conclude(&mut self, outcome: SessionOutcome) {
        if self.outcome.is_none() {
            self.outcome = Some(outcome);
        }
    }
}

fn digest(payload: &str) -> String {
    let hash = Sha256::digest(payload.as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

/// Fetches, opens, and runs. Setup failures surface before the backend is
/// contacted.
pub fn run_session(
    client: &IssueClient,
    issue_url: &str,
    repo_source: &str,
    config: &SessionConfig,
    backend: &mut dyn ChatBackend,
    clock: &dyn Clock,
) -> Result<(SessionOutcome, SessionState), SessionError> {
    let started = clock.monotonic_seconds();
    let ws = Workspace::open(client, issue_url, repo_source, config, clock.now())?;
    let (outcome, mut state) = run_workspace(&ws, config, backend, clock)?;
    state.wall_time_s = clock.monotonic_seconds() - started;
    Ok((outcome, state))
}

pub fn run_workspace(
    ws: &Workspace,
    config: &SessionConfig,
    backend: &mut dyn ChatBackend,
    clock: &dyn Clock,
) -> Result<(SessionOutcome, SessionState), SessionError> {
    let started = clock.monotonic_seconds();
    let budgets = config.budgets;
    let prompt = build_initial_prompt(&ws.issue.url, &budgets, &ws.registry);
    let mut state = SessionState {
        iteration: 0,
        conversation: Conversation::new(prompt, &budgets),
        call_log: Vec::new(),
        auto_discarded: Vec::new(),
        outcome: None,
        wall_time_s: 0.0,
        ledger_trace: Vec::new(),
    };
    if state.total_tokens() > budgets.max_total_tokens {
        state.conclude(SessionOutcome::BudgetExhausted(ExhaustedBudget::Tokens));
    }

    while state.outcome.is_none() {
        let reply = next_action(&state.conversation, &ws.registry, &config.model, backend)?;
        state.iteration += 1;
        state.conversation.push_assistant(&reply);
        if reply.calls.is_empty() {
            state.conversation.push_notice(FREE_TEXT_NOTICE);
        }
        for call in &reply.calls {
            if state.outcome.is_some() {
                log::debug!("ignoring {} after the session concluded", call.name);
                continue;
            }
            execute(ws, &mut state, call);
        }
        let expired = state.conversation.expire_feedback();
        state.auto_discarded.extend(expired);
        state.ledger_trace.push(state.total_tokens());
        if state.outcome.is_some() {
            break;
        }
        if state.total_tokens() > budgets.max_total_tokens {
            state.conclude(SessionOutcome::BudgetExhausted(ExhaustedBudget::Tokens));
        } else if state.iteration >= budgets.max_iterations {
            state.conclude(SessionOutcome::BudgetExhausted(ExhaustedBudget::Iterations));
        }
    }

    state.wall_time_s = clock.monotonic_seconds() - started;
    let outcome = state.outcome.clone().expect("loop exits with an outcome");
    Ok((outcome, state))
}

/// Runs one call and records it. Control calls are interpreted here; every
/// other call goes through the registry.
fn execute(ws: &Workspace, state: &mut SessionState, call: &ToolCall) {
    let mut verdict = None;
    let payload = match ws.registry.check_call(call) {
        Err(payload) => payload,
        Ok(schema) => match schema.name.as_str() {
            "finish" => {
                let hash = call.args().hash("commit_hash");
                match hash {
                    Ok(hash) if ws.history.contains(&hash) => {
                        let text = format!("ok: finished with commit {hash}");
                        state.conclude(SessionOutcome::Finished(hash));
                        text
                    }
                    Ok(hash) => format!(
                        "error: unknown commit hash {hash}; it is not in this repository. \
                         Pass a full hash returned by one of the commit functions."
                    ),
                    Err(err) => format!("error: {err}"),
                }
            }
            "give_up" => {
                let reason = call.args().opt_str("reason").unwrap_or_default().to_string();
                state.conclude(SessionOutcome::GaveUp { reason });
                "ok: gave up".to_string()
            }
            "feedback" => {
                let target = call.args().opt_str("call_id").unwrap_or_default().to_string();
                match call.args().opt_str("verdict").and_then(Verdict::parse) {
                    None => "error: verdict must be `discard` or `preserve`".to_string(),
                    Some(v) => match state.conversation.apply_feedback(&target, v) {
                        Ok(()) => {
                            verdict = Some(v);
                            match v {
                                Verdict::Discard => format!("ok: result of {target} discarded"),
                                Verdict::Preserve => format!("ok: result of {target} preserved"),
                            }
                        }
                        Err(err) => format!("error: {err}; feedback is only accepted when requested"),
                    },
                }
            }
            _ => ws.registry.route_call(call).payload,
        },
    };
    let result = ToolResult::new(call.call_id.clone(), payload);
    state.call_log.push(CallRecord {
        iteration: state.iteration,
        call_id: call.call_id.clone(),
        name: call.name.clone(),
        arguments: call.arguments.clone(),
        byte_size: result.byte_size,
        verdict,
        payload_sha256: digest(&result.payload),
    });
    state.conversation.push_result(result);
}
