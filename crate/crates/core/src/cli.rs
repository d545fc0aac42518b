//! Command-line entry points. Secrets come from the environment only:
//! `OPENAI_API_KEY` (and optional `OPENAI_BASE_URL`) for the model,
//! `GITHUB_TOKEN`, `JIRA_TOKEN`, or `JIRA_USER` + `JIRA_API_TOKEN` for trackers.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::domain::{parse_time, Budgets, OutcomeKind};
use crate::eval::{
    adjust_ground_truth, load_dataset, parse_link_table, run_eval, Dataset, LinkRecord, PipelineRunner,
    ScriptSource,
};
use crate::fixtures::write_fixture_tree;
use crate::http::{HttpTransport, RecordedTransport, ReqwestTransport, RetryPolicy};
use crate::issue::{IssueClient, TrackerAuth};
use crate::llm::{ChatBackend, LiveBackend, ScriptedBackend, DEFAULT_MODEL};
use crate::metrics::{self, write_jsonl, DEFAULT_PRICE_PER_TOKEN_USD};
use crate::session::{run_session, Clock, FrozenClock, SessionConfig, SystemClock};

pub const EXIT_FINISHED: i32 = 0;
pub const EXIT_SETUP: i32 = 1;
pub const EXIT_GAVE_UP: i32 = 2;
pub const EXIT_EXHAUSTED: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

pub fn exit_code(kind: OutcomeKind) -> i32 {
    match kind {
        OutcomeKind::Finished => EXIT_FINISHED,
        OutcomeKind::GaveUp => EXIT_GAVE_UP,
        OutcomeKind::BudgetExhausted => EXIT_EXHAUSTED,
    }
}

#[derive(Debug, Parser)]
#[command(name = "commitlink", version, about = "Find the commit that resolved an issue")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Link one issue to its resolving commit.
    Link(LinkArgs),
    /// Run sessions over a ground-truth dataset and report Hit@1.
    Eval(EvalArgs),
    /// Write the offline fixture tree (repository, tracker responses, scripts, dataset).
    Fixtures {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Live,
    Scripted,
}

#[derive(Debug, Args)]
struct SessionArgs {
    #[arg(long, default_value_t = crate::domain::DEFAULT_MAX_ITERATIONS)]
    max_iterations: u32,
    #[arg(long, default_value_t = crate::domain::DEFAULT_MAX_TOTAL_TOKENS)]
    max_tokens: u64,
    #[arg(long, default_value_t = crate::domain::DEFAULT_FEEDBACK_THRESHOLD_BYTES)]
    feedback_threshold_bytes: usize,
    #[arg(long, default_value = DEFAULT_MODEL)]
    model: String,
    #[arg(long, value_enum, default_value_t = BackendKind::Live)]
    backend: BackendKind,
    #[arg(long, default_value_t = crate::domain::DEFAULT_PAGE_SIZE)]
    page_size: usize,
    /// Serve tracker requests from recorded responses in DIR.
    #[arg(long, value_name = "DIR")]
    http_fixtures: Option<PathBuf>,
    /// Fix "now" to TIME and report zero wall time, for reproducible records.
    #[arg(long, value_name = "TIME")]
    frozen_clock: Option<String>,
    /// Where remote repositories are mirrored.
    #[arg(long, value_name = "DIR")]
    cache_dir: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PRICE_PER_TOKEN_USD)]
    price_per_token: f64,
}

#[derive(Debug, Args)]
struct LinkArgs {
    #[arg(long)]
    issue_url: String,
    /// Local path or clone URL.
    #[arg(long)]
    repo: String,
    /// Session script for the scripted backend.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Also write the output record to FILE.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the call log as JSON lines.
    #[arg(long)]
    call_log: Option<PathBuf>,
    /// Write the session metrics as one JSON line.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    session: SessionArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Tab-separated dataset: issue_id, issue_url, repo_id, `;`-separated hashes.
    #[arg(long, required_unless_present = "link_table", conflicts_with = "link_table")]
    dataset: Option<PathBuf>,
    /// Link table CSV (issue column, commit column) for a single project.
    #[arg(long, requires_all = ["repo_id", "issue_url_template"])]
    link_table: Option<PathBuf>,
    #[arg(long)]
    repo_id: Option<String>,
    /// Issue URL with `{issue_id}` in place of the id.
    #[arg(long)]
    issue_url_template: Option<String>,
    #[arg(long, default_value_t = 3)]
    runs: usize,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Directory of `<issue_id>.jsonl` scripts for the scripted backend.
    #[arg(long)]
    scripts: Option<PathBuf>,
    /// Directory holding one repository per repo id.
    #[arg(long)]
    repos: Option<PathBuf>,
    /// Write the report table to FILE.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write one JSON line per session.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Write per-session metrics as JSON lines.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    session: SessionArgs,
}

struct Prepared {
    config: SessionConfig,
    clock: Arc<dyn Clock>,
    client: IssueClient,
}

fn prepare(args: &SessionArgs) -> Result<Prepared, String> {
    let budgets = Budgets::new(args.max_iterations, args.max_tokens, args.feedback_threshold_bytes)
        .map_err(|e| e.to_string())?;
    if args.page_size == 0 || args.page_size > crate::domain::MAX_PAGE_SIZE {
        return Err(format!("--page-size must be in 1..={}", crate::domain::MAX_PAGE_SIZE));
    }
    let clock: Arc<dyn Clock> = match &args.frozen_clock {
        Some(raw) => Arc::new(FrozenClock(parse_time(raw).map_err(|e| e.to_string())?)),
        None => Arc::new(SystemClock::default()),
    };
    let transport: Arc<dyn HttpTransport> = match &args.http_fixtures {
        Some(dir) => Arc::new(RecordedTransport::load_dir(dir).map_err(|e| e.to_string())?),
        None => Arc::new(ReqwestTransport::new(Duration::from_secs(30)).map_err(|e| e.to_string())?),
    };
    let retry = if args.http_fixtures.is_some() {
        RetryPolicy::immediate(2)
    } else {
        RetryPolicy::default()
    };
    let mut config = SessionConfig {
        budgets,
        model: args.model.clone(),
        page_size: args.page_size,
        ..SessionConfig::default()
    };
    if let Some(dir) = &args.cache_dir {
        config.cache_dir = dir.clone();
    }
    Ok(Prepared {
        config,
        clock,
        client: IssueClient::new(transport, TrackerAuth::from_env(), retry),
    })
}

fn live_transport() -> Result<Arc<dyn HttpTransport>> {
    Ok(Arc::new(ReqwestTransport::new(Duration::from_secs(180))?))
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run(args: impl IntoIterator<Item = OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{rendered}");
            } else {
                let _ = write!(err, "{rendered}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Link(args) => link(args, out, err),
        Command::Eval(args) => eval(args, out, err),
        Command::Fixtures { out: dir } => fixtures(&dir, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_SETUP
        }
    }
}

fn usage(err: &mut dyn Write, message: &str) -> Result<i32> {
    writeln!(err, "error: {message}\n\nRun with --help for usage.")?;
    Ok(EXIT_USAGE)
}

fn link(args: LinkArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let prepared = match prepare(&args.session) {
        Ok(p) => p,
        Err(message) => return usage(err, &message),
    };
    let mut backend: Box<dyn ChatBackend> = match (args.session.backend, &args.script) {
        (BackendKind::Scripted, Some(path)) => Box::new(ScriptedBackend::load(path)?),
        (BackendKind::Scripted, None) => return usage(err, "--backend scripted needs --script FILE"),
        (BackendKind::Live, Some(_)) => return usage(err, "--script only applies to --backend scripted"),
        (BackendKind::Live, None) => Box::new(LiveBackend::from_env(live_transport()?)?),
    };

    let session = run_session(
        &prepared.client,
        &args.issue_url,
        &args.repo,
        &prepared.config,
        backend.as_mut(),
        prepared.clock.as_ref(),
    );
    let (link_record, code, state) = match session {
        Ok((outcome, state)) => (
            LinkRecord::from_session(&args.issue_url, &outcome, &state),
            exit_code(outcome.kind()),
            Some(state),
        ),
        Err(e) => {
            writeln!(err, "error: {e}")?;
            (LinkRecord::from_error(&args.issue_url, &e), EXIT_SETUP, None)
        }
    };
    let line = link_record.to_json_line();
    writeln!(out, "{line}")?;
    if let Some(path) = &args.out {
        write_file(path, format!("{line}\n").as_bytes())?;
    }
    if let Some(state) = &state {
        if let Some(path) = &args.call_log {
            let mut buf = Vec::new();
            write_jsonl(&mut buf, &state.call_log)?;
            write_file(path, &buf)?;
        }
        if let Some(path) = &args.metrics {
            let m = metrics::record(
                &state.call_log,
                state.conversation.ledger(),
                state.wall_time_s,
                args.session.price_per_token,
            );
            let mut buf = Vec::new();
            write_jsonl(&mut buf, &[m])?;
            write_file(path, &buf)?;
        }
    }
    Ok(code)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn eval(args: EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let prepared = match prepare(&args.session) {
        Ok(p) => p,
        Err(message) => return usage(err, &message),
    };
    if args.runs == 0 {
        return usage(err, "--runs must be at least 1");
    }
    let source = match (args.session.backend, &args.scripts) {
        (BackendKind::Scripted, Some(dir)) => ScriptSource::Scripted(dir.clone()),
        (BackendKind::Scripted, None) => return usage(err, "--backend scripted needs --scripts DIR"),
        (BackendKind::Live, Some(_)) => return usage(err, "--scripts only applies to --backend scripted"),
        (BackendKind::Live, None) => ScriptSource::Live(live_transport()?),
    };
    let dataset: Dataset = match (&args.dataset, &args.link_table) {
        (Some(path), _) => match load_dataset(path) {
            Ok(d) => d,
            Err(e) => {
                writeln!(err, "error: {e}")?;
                return Ok(EXIT_SETUP);
            }
        },
        (None, Some(path)) => {
            let text = match std::fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => {
                    writeln!(err, "error: cannot read dataset {}: {e}", path.display())?;
                    return Ok(EXIT_SETUP);
                }
            };
            let repo_id = args.repo_id.as_deref().unwrap_or_default();
            let template = args.issue_url_template.as_deref().unwrap_or_default();
            match parse_link_table(&text, repo_id, template) {
                Ok(d) => d,
                Err(e) => {
                    writeln!(err, "error: {e}")?;
                    return Ok(EXIT_SETUP);
                }
            }
        }
        (None, None) => return usage(err, "--dataset or --link-table is required"),
    };
    for s in &dataset.skipped {
        writeln!(err, "warning: dataset line {} skipped: {}", s.line, s.reason)?;
    }

    let runner = PipelineRunner::new(
        prepared.config,
        prepared.client,
        args.repos.clone(),
        source,
        prepared.clock,
        args.session.price_per_token,
    )?;
    let (records, excluded) = adjust_ground_truth(&dataset.records, |repo_id, hash| {
        let (_, history) = runner.repo(repo_id).ok()?;
        history.get(hash).map(|c| c.commit_time)
    });
    for e in &excluded {
        writeln!(err, "warning: issue {} excluded: {}", e.issue_id, e.reason)?;
    }
    let mut report = run_eval(&records, &runner, args.runs, args.parallel);
    report.excluded = excluded;
    report.skipped_lines = dataset.skipped;

    let table = report.render_table();
    write!(out, "{table}")?;
    if let Some(path) = &args.report {
        write_file(path, table.as_bytes())?;
    }
    if let Some(path) = &args.records {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &report.rows)?;
        write_file(path, &buf)?;
    }
    if let Some(path) = &args.metrics {
        let rows: Vec<serde_json::Value> = report
            .rows
            .iter()
            .filter_map(|r| {
                r.metrics.as_ref().map(|m| {
                    serde_json::json!({"run": r.run, "issue_id": r.issue_id, "repo_id": r.repo_id, "metrics": m})
                })
            })
            .collect();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &rows)?;
        write_file(path, &buf)?;
    }
    Ok(0)
}

fn fixtures(dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let tree = write_fixture_tree(dir).map_err(|e| anyhow::anyhow!("{e}"))?;
    writeln!(out, "repository  {}", tree.fix.path.display())?;
    writeln!(out, "http        {}", tree.http.display())?;
    writeln!(out, "scripts     {}", tree.scripts.display())?;
    writeln!(out, "dataset     {}", tree.dataset.display())?;
    for (name, hash) in [("C1", &tree.fix.c1), ("C2", &tree.fix.c2), ("C3", &tree.fix.c3), ("C4", &tree.fix.c4)] {
        writeln!(out, "{name}          {hash}")?;
    }
    Ok(0)
}
