use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Exclusion, GroundTruthRecord, SkippedLine};
use crate::code::ProfileSet;
use crate::domain::{SessionOutcome, OutcomeKind};
use crate::git::{RepoHandle, UnifiedHistory};
use crate::http::HttpTransport;
use crate::issue::{IssueClient, IssueSnapshot};
use crate::llm::{ChatBackend, LiveBackend, ScriptedBackend};
use crate::metrics::{aggregate, record, MetricsSummary, SessionMetrics};
use crate::session::{run_workspace, CallRecord, Clock, SessionConfig, SessionError, SessionState, Workspace};

/// The output of one `link` run. Field order is part of the format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub issue_url: String,
    /// `finished`, `gave_up`, `budget_exhausted`, or `error`.
    pub outcome: String,
    pub commit: Option<String>,
    pub reason: Option<String>,
    pub iterations: u32,
    pub tokens: u64,
    pub wall_time_s: f64,
}

impl LinkRecord {
    pub fn from_session(issue_url: &str, outcome: &SessionOutcome, state: &SessionState) -> Self {
        Self {
            issue_url: issue_url.to_string(),
            outcome: outcome.kind().as_str().to_string(),
            commit: outcome.commit().map(|h| h.to_string()),
            reason: outcome.reason(),
            iterations: state.iteration,
            tokens: state.total_tokens(),
            wall_time_s: state.wall_time_s,
        }
    }

    pub fn from_error(issue_url: &str, err: &SessionError) -> Self {
        Self {
            issue_url: issue_url.to_string(),
            outcome: "error".to_string(),
            commit: None,
            reason: Some(err.to_string()),
            iterations: 0,
            tokens: 0,
            wall_time_s: 0.0,
        }
    }

    pub fn kind(&self) -> Option<OutcomeKind> {
        match self.outcome.as_str() {
            "finished" => Some(OutcomeKind::Finished),
            "gave_up" => Some(OutcomeKind::GaveUp),
            "budget_exhausted" => Some(OutcomeKind::BudgetExhausted),
            _ => None,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn parse(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

#[derive(Debug, Clone)]
pub struct SessionReport {
    pub record: LinkRecord,
    pub metrics: Option<SessionMetrics>,
    pub call_log: Vec<CallRecord>,
}

/// Runs one issue. Implementations must not panic on per-issue failures;
/// they report them as an `error` record.
pub trait SessionRunner: Sync {
    fn run(&self, record: &GroundTruthRecord, run: usize) -> SessionReport;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRow {
    pub run: usize,
    pub issue_id: String,
    pub repo_id: String,
    pub resolving_commit: String,
    pub correct: bool,
    #[serde(flatten)]
    pub record: LinkRecord,
    pub metrics: Option<SessionMetrics>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectReport {
    pub issues: usize,
    pub per_run_hit_at_1: Vec<f64>,
    pub mean_hit_at_1: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub finished: usize,
    pub gave_up: usize,
    pub budget_exhausted: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub runs: usize,
    pub projects: BTreeMap<String, ProjectReport>,
    pub overall: ProjectReport,
    pub counts: OutcomeCounts,
    pub metrics: MetricsSummary,
    pub excluded: Vec<Exclusion>,
    pub skipped_lines: Vec<SkippedLine>,
    pub rows: Vec<SessionRow>,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// `runs` independent passes over `records`, each issue a fresh session.
/// Up to `parallel` sessions run at once; the report is assembled in
/// dataset order regardless.
pub fn run_eval(records: &[GroundTruthRecord], runner: &dyn SessionRunner, runs: usize, parallel: usize) -> RunReport {
    let jobs: Vec<(usize, usize)> = (0..runs).flat_map(|r| (0..records.len()).map(move |i| (r, i))).collect();
    let slots: Vec<Mutex<Option<SessionReport>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let j = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(run, i)) = jobs.get(j) else { break };
        let report = runner.run(&records[i], run);
        *slots[j].lock().unwrap_or_else(|p| p.into_inner()) = Some(report);
    };
    std::thread::scope(|s| {
        for _ in 0..parallel.max(1) {
            s.spawn(worker);
        }
    });

    let mut report = RunReport {
        runs,
        ..RunReport::default()
    };
    let mut hits: BTreeMap<&str, Vec<Vec<bool>>> = BTreeMap::new();
    for (&(run, i), slot) in jobs.iter().zip(slots) {
        let rec = &records[i];
        let session = slot
            .into_inner()
            .unwrap_or_else(|p| p.into_inner())
            .expect("every job ran");
        let correct = session.record.commit.as_deref() == Some(rec.resolving_commit.as_str());
        match session.record.kind() {
            Some(OutcomeKind::Finished) => report.counts.finished += 1,
            Some(OutcomeKind::GaveUp) => report.counts.gave_up += 1,
            Some(OutcomeKind::BudgetExhausted) => report.counts.budget_exhausted += 1,
            None => report.counts.errors += 1,
        }
        let per_run = hits.entry(&rec.repo_id).or_insert_with(|| vec![Vec::new(); runs]);
        per_run[run].push(correct);
        report.rows.push(SessionRow {
            run,
            issue_id: rec.issue_id.clone(),
            repo_id: rec.repo_id.clone(),
            resolving_commit: rec.resolving_commit.to_string(),
            correct,
            record: session.record,
            metrics: session.metrics,
        });
    }
    let rate = |v: &[bool]| v.iter().filter(|&&c| c).count() as f64 / v.len().max(1) as f64;
    for (repo, per_run) in &hits {
        let values: Vec<f64> = per_run.iter().map(|v| rate(v)).collect();
        report.projects.insert(
            repo.to_string(),
            ProjectReport {
                issues: per_run.first().map_or(0, Vec::len),
                mean_hit_at_1: mean(&values),
                per_run_hit_at_1: values,
            },
        );
    }
    let overall: Vec<f64> = (0..runs)
        .map(|r| {
            let all: Vec<bool> = hits.values().flat_map(|pr| pr[r].iter().copied()).collect();
            rate(&all)
        })
        .collect();
    report.overall = ProjectReport {
        issues: records.len(),
        mean_hit_at_1: mean(&overall),
        per_run_hit_at_1: overall,
    };
    let metrics: Vec<SessionMetrics> = report.rows.iter().filter_map(|r| r.metrics.clone()).collect();
    report.metrics = aggregate(&metrics);
    report
}

impl RunReport {
    /// Human-readable summary.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let runs: Vec<String> = (1..=self.runs).map(|r| format!("run {r:>2}")).collect();
        let _ = writeln!(out, "{:<24} {:>6}  {}  {:>6}", "project", "issues", runs.join("  "), "mean");
        let mut line = |name: &str, p: &ProjectReport| {
            let values: Vec<String> = p.per_run_hit_at_1.iter().map(|v| format!("{v:>6.3}")).collect();
            let _ = writeln!(
                out,
                "{name:<24} {:>6}  {}  {:>6.3}",
                p.issues,
                values.join("  "),
                p.mean_hit_at_1
            );
        };
        for (name, p) in &self.projects {
            line(name, p);
        }
        line("all", &self.overall);
        let c = self.counts;
        let _ = writeln!(
            out,
            "\nsessions: {} finished, {} gave up, {} budget exhausted, {} errors",
            c.finished, c.gave_up, c.budget_exhausted, c.errors
        );
        let _ = writeln!(
            out,
            "Hit@1 counts every issue in the denominator; gave-up, exhausted, and failed sessions are misses."
        );
        if self.metrics.sessions > 0 {
            let m = &self.metrics;
            let _ = writeln!(
                out,
                "median per session: {:.2}s, {:.0} tokens, ${:.4}",
                m.median_wall_time_s, m.median_tokens, m.median_cost_usd
            );
        }
        if !self.excluded.is_empty() {
            let _ = writeln!(out, "\nexcluded issues:");
            for e in &self.excluded {
                let _ = writeln!(out, "  {}: {}", e.issue_id, e.reason);
            }
        }
        if !self.skipped_lines.is_empty() {
            let _ = writeln!(out, "\nskipped dataset lines:");
            for s in &self.skipped_lines {
                let _ = writeln!(out, "  line {}: {}", s.line, s.reason);
            }
        }
        out
    }
}

/// Where each session's model turns come from.
pub enum ScriptSource {
    /// `<dir>/<issue_id>.jsonl` per issue.
    Scripted(PathBuf),
    /// The chat-completions endpoint configured in the environment.
    Live(Arc<dyn HttpTransport>),
}

/// Runs real sessions: fetched issues, local repositories, and either
/// scripted or live model turns. Repositories and issues are loaded once and
/// shared by all passes.
pub struct PipelineRunner {
    pub config: SessionConfig,
    pub client: IssueClient,
    /// Directory holding one clone per repo id. Without it the repo id is
    /// used as a path or clone URL.
    pub repos_dir: Option<PathBuf>,
    pub source: ScriptSource,
    pub clock: Arc<dyn Clock>,
    pub price_per_token: f64,
    profiles: Arc<ProfileSet>,
    repos: Mutex<HashMap<String, (Arc<RepoHandle>, Arc<UnifiedHistory>)>>,
    issues: Mutex<HashMap<String, IssueSnapshot>>,
}

impl PipelineRunner {
    pub fn new(
        config: SessionConfig,
        client: IssueClient,
        repos_dir: Option<PathBuf>,
        source: ScriptSource,
        clock: Arc<dyn Clock>,
        price_per_token: f64,
    ) -> Result<Self, SessionError> {
        Ok(Self {
            config,
            client,
            repos_dir,
            source,
            clock,
            price_per_token,
            profiles: Arc::new(ProfileSet::builtin()?),
            repos: Mutex::new(HashMap::new()),
            issues: Mutex::new(HashMap::new()),
        })
    }

    pub fn repo(&self, repo_id: &str) -> Result<(Arc<RepoHandle>, Arc<UnifiedHistory>), SessionError> {
        if let Some(hit) = self.repos.lock().unwrap_or_else(|p| p.into_inner()).get(repo_id) {
            return Ok(hit.clone());
        }
        let source = match &self.repos_dir {
            Some(dir) => dir.join(repo_id).display().to_string(),
            None => repo_id.to_string(),
        };
        let handle = Arc::new(RepoHandle::open_source(&source, &self.config.cache_dir)?);
        let history = Arc::new(UnifiedHistory::build(&handle.lock())?);
        let entry = (handle, history);
        self.repos
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(repo_id.to_string(), entry.clone());
        Ok(entry)
    }

    fn issue(&self, url: &str) -> Result<IssueSnapshot, SessionError> {
        if let Some(hit) = self.issues.lock().unwrap_or_else(|p| p.into_inner()).get(url) {
            return Ok(hit.clone());
        }
        let snapshot = self.client.fetch_issue(url)?;
        self.issues
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(url.to_string(), snapshot.clone());
        Ok(snapshot)
    }

    fn backend(&self, issue_id: &str) -> Result<Box<dyn ChatBackend>, SessionError> {
        Ok(match &self.source {
            ScriptSource::Scripted(dir) => {
                let file = format!("{}.jsonl", issue_id.replace(['/', '\\'], "_"));
                Box::new(ScriptedBackend::load(&dir.join(file))?)
            }
            ScriptSource::Live(transport) => Box::new(LiveBackend::from_env(transport.clone())?),
        })
    }

    fn session(&self, rec: &GroundTruthRecord) -> Result<(SessionOutcome, SessionState), SessionError> {
        let started = self.clock.monotonic_seconds();
        let (repo, history) = self.repo(&rec.repo_id)?;
        let issue = self.issue(&rec.issue_url)?;
        let mut backend = self.backend(&rec.issue_id)?;
        let ws = Workspace::new(
            issue,
            repo,
            history,
            self.profiles.clone(),
            self.config.page_size,
            self.clock.now(),
        )?;
        let (outcome, mut state) = run_workspace(&ws, &self.config, backend.as_mut(), self.clock.as_ref())?;
        state.wall_time_s = self.clock.monotonic_seconds() - started;
        Ok((outcome, state))
    }
}

impl SessionRunner for PipelineRunner {
    fn run(&self, rec: &GroundTruthRecord, run: usize) -> SessionReport {
        match self.session(rec) {
            Ok((outcome, state)) => SessionReport {
                record: LinkRecord::from_session(&rec.issue_url, &outcome, &state),
                metrics: Some(record(
                    &state.call_log,
                    state.conversation.ledger(),
                    state.wall_time_s,
                    self.price_per_token,
                )),
                call_log: state.call_log,
            },
            Err(err) => {
                log::warn!("run {run}, issue {}: {err}", rec.issue_id);
                SessionReport {
                    record: LinkRecord::from_error(&rec.issue_url, &err),
                    metrics: None,
                    call_log: Vec::new(),
                }
            }
        }
    }
}
