//! Helpers shared by the integration tests: a `git` CLI oracle, an
//! independent glob matcher, and session runners over the fixtures.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use commitlink::code::ProfileSet;
use commitlink::domain::{Budgets, CommitHash, CommitMeta, Pagination, SessionOutcome, Timestamp, TimeWindow};
use commitlink::fixtures::{build_fix_repo, fixture_http_responses, FixRepo};
use commitlink::git::{GitExtractor, RepoHandle, UnifiedHistory};
use commitlink::http::{RecordedTransport, RetryPolicy};
use commitlink::issue::{IssueClient, TrackerAuth};
use commitlink::llm::ScriptedBackend;
use commitlink::session::{run_workspace, FrozenClock, SessionConfig, SessionState, Workspace};

pub fn git(repo: &Path, args: &[&str]) -> String {
    let out = Command::new("git")
        .arg("--git-dir")
        .arg(repo)
        .args(args)
        .output()
        .expect("git is installed");
    assert!(
        out.status.success(),
        "git {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 git output")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleCommit {
    pub hash: String,
    pub parents: Vec<String>,
    pub commit_time: i64,
    pub author_time: i64,
    pub author: (String, String),
    pub committer: (String, String),
    pub message: String,
}

/// Every reachable commit according to `git log --all`, keyed by hash.
pub fn oracle_commits(repo: &Path) -> BTreeMap<String, OracleCommit> {
    let raw = git(
        repo,
        &[
            "log",
            "--all",
            "--format=%H%x1f%P%x1f%ct%x1f%at%x1f%an%x1f%ae%x1f%cn%x1f%ce%x1f%B%x1e",
        ],
    );
    let mut out = BTreeMap::new();
    for record in raw.split('\x1e') {
        let record = record.trim_start_matches('\n');
        if record.is_empty() {
            continue;
        }
        let f: Vec<&str> = record.split('\x1f').collect();
        assert_eq!(f.len(), 9, "bad log record {record:?}");
        let c = OracleCommit {
            hash: f[0].to_string(),
            parents: f[1].split_whitespace().map(str::to_string).collect(),
            commit_time: f[2].parse().unwrap(),
            author_time: f[3].parse().unwrap(),
            author: (f[4].to_string(), f[5].to_string()),
            committer: (f[6].to_string(), f[7].to_string()),
            message: f[8].to_string(),
        };
        out.insert(c.hash.clone(), c);
    }
    out
}

/// Hashes from `git rev-list --all`.
pub fn oracle_rev_list(repo: &Path) -> Vec<String> {
    git(repo, &["rev-list", "--all"]).lines().map(str::to_string).collect()
}

/// One `--name-status` entry: status letter, path, and the old path of a rename.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct OracleChange {
    pub status: char,
    pub path: String,
    pub old_path: Option<String>,
}

fn diff_tree_args<'a>(c: &'a OracleCommit, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec!["diff-tree", "-r", "-M"];
    args.extend_from_slice(extra);
    match c.parents.first() {
        Some(p) => {
            args.push(p);
            args.push(&c.hash);
        }
        None => {
            args.push("--root");
            args.push(&c.hash);
        }
    }
    args
}

/// Changes of `c` against its first parent (or the empty tree).
pub fn oracle_changes(repo: &Path, c: &OracleCommit) -> Vec<OracleChange> {
    let raw = git(repo, &diff_tree_args(c, &["--name-status"]));
    let mut out: Vec<OracleChange> = raw
        .lines()
        .filter(|l| l.contains('\t'))
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            let status = f[0].chars().next().unwrap();
            if status == 'R' {
                OracleChange {
                    status,
                    path: f[2].to_string(),
                    old_path: Some(f[1].to_string()),
                }
            } else {
                OracleChange {
                    status,
                    path: f[1].to_string(),
                    old_path: None,
                }
            }
        })
        .collect();
    out.sort();
    out
}

/// (added lines, removed lines, binary files) summed over the commit.
pub fn oracle_numstat(repo: &Path, c: &OracleCommit) -> (usize, usize, usize) {
    let raw = git(repo, &diff_tree_args(c, &["--numstat"]));
    let (mut added, mut removed, mut binary) = (0, 0, 0);
    for line in raw.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 3 {
            continue;
        }
        if f[0] == "-" {
            binary += 1;
        } else {
            added += f[0].parse::<usize>().unwrap();
            removed += f[1].parse::<usize>().unwrap();
        }
    }
    (added, removed, binary)
}

/// Glob match where `*` and `?` stay inside one path segment and `**`
/// spans any number of segments. Written from scratch as an oracle.
pub fn glob_oracle(pattern: &str, path: &str) -> bool {
    fn segs(p: &str) -> Vec<&str> {
        p.split('/').collect()
    }
    fn seg_match(p: &[u8], s: &[u8]) -> bool {
        match (p.first(), s.first()) {
            (None, None) => true,
            (Some(b'*'), _) => seg_match(&p[1..], s) || (!s.is_empty() && seg_match(p, &s[1..])),
            (Some(b'?'), Some(_)) => seg_match(&p[1..], &s[1..]),
            (Some(a), Some(b)) if a == b => seg_match(&p[1..], &s[1..]),
            _ => false,
        }
    }
    fn go(p: &[&str], s: &[&str]) -> bool {
        match p.first() {
            None => s.is_empty(),
            Some(&"**") => (0..=s.len()).any(|k| go(&p[1..], &s[k..])),
            Some(seg) => !s.is_empty() && seg_match(seg.as_bytes(), s[0].as_bytes()) && go(&p[1..], &s[1..]),
        }
    }
    go(&segs(pattern), &segs(path))
}

pub fn open_extractor(path: &Path, window: TimeWindow) -> (Arc<RepoHandle>, Arc<UnifiedHistory>, GitExtractor) {
    let repo = Arc::new(RepoHandle::open(path).unwrap());
    let history = Arc::new(UnifiedHistory::build(&repo.lock()).unwrap());
    let ex = GitExtractor::with_history(repo.clone(), history.clone(), window);
    (repo, history, ex)
}

/// Collects every page of a paginated query.
pub fn all_pages(page_size: usize, mut fetch: impl FnMut(Pagination) -> Vec<CommitMeta>) -> Vec<CommitMeta> {
    let mut out = Vec::new();
    for page in 0.. {
        let items = fetch(Pagination::new(page, page_size).unwrap());
        if items.is_empty() {
            break;
        }
        assert!(items.len() <= page_size);
        out.extend(items);
    }
    out
}

pub fn hashes(commits: &[CommitMeta]) -> Vec<String> {
    commits.iter().map(|c| c.hash.to_string()).collect()
}

pub fn unix(t: &Timestamp) -> i64 {
    t.timestamp()
}

pub fn fixture_transport() -> Arc<RecordedTransport> {
    let t = Arc::new(RecordedTransport::new());
    for (method, url, response) in fixture_http_responses() {
        t.insert(method, url, response);
    }
    t
}

pub fn fixture_client() -> IssueClient {
    IssueClient::new(fixture_transport(), TrackerAuth::default(), RetryPolicy::immediate(2))
}

pub fn frozen_now() -> Timestamp {
    commitlink::domain::parse_time("2024-06-01T00:00:00Z").unwrap()
}

/// The FIX repository in a temp dir, kept alive by the returned guard.
pub struct FixEnv {
    pub dir: tempfile::TempDir,
    pub fix: FixRepo,
}

pub fn fix_env() -> FixEnv {
    let dir = tempfile::tempdir().unwrap();
    let fix = build_fix_repo(&dir.path().join("widget.git")).unwrap();
    FixEnv { dir, fix }
}

pub fn workspace(issue_url: &str, repo: &Path, page_size: usize) -> Workspace {
    let client = fixture_client();
    let issue = client.fetch_issue(issue_url).unwrap();
    let repo = Arc::new(RepoHandle::open(repo).unwrap());
    let history = Arc::new(UnifiedHistory::build(&repo.lock()).unwrap());
    let profiles = Arc::new(ProfileSet::builtin().unwrap());
    Workspace::new(issue, repo, history, profiles, page_size, frozen_now()).unwrap()
}

pub struct Run {
    pub outcome: SessionOutcome,
    pub state: SessionState,
    /// Wire bodies sent to the backend, in order.
    pub requests: Vec<String>,
}

pub fn run_script(ws: &Workspace, script: &str, budgets: Budgets) -> Run {
    let mut backend = ScriptedBackend::parse(script).unwrap();
    let config = SessionConfig {
        budgets,
        ..SessionConfig::default()
    };
    let (outcome, state) = run_workspace(ws, &config, &mut backend, &FrozenClock(frozen_now())).unwrap();
    Run {
        outcome,
        state,
        requests: backend.requests().to_vec(),
    }
}

pub fn script_lines(lines: &[serde_json::Value]) -> String {
    lines.iter().map(|l| format!("{l}\n")).collect()
}

pub fn commit_hash(raw: &str) -> CommitHash {
    CommitHash::parse(raw).unwrap()
}

/// A commit of [`bulk_repo`]: its hash and a line that occurs only in its file.
pub struct BulkCommit {
    pub hash: CommitHash,
    pub marker: String,
    pub bytes: usize,
}

/// A linear repository whose commits each add one large text file, so
/// `commit_diff` results have a chosen size.
pub fn bulk_repo(path: &Path, sizes: &[usize]) -> Vec<BulkCommit> {
    use commitlink::fixtures::{Files, RepoBuilder, ALICE};
    let b = RepoBuilder::init_bare(path).unwrap();
    let mut files = Files::new();
    let mut parent = None;
    let mut out = Vec::new();
    let base = commitlink::domain::parse_time("2024-03-01T00:00:00Z").unwrap().timestamp();
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    for (i, &size) in sizes.iter().enumerate() {
        let mut text = String::new();
        let mut j = 0;
        while text.len() < size {
            state = state.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407);
            text.push_str(&format!("bulk{i}-line-{j} {:016x}\n", state));
            j += 1;
        }
        let marker = format!("bulk{i}-line-{} ", j / 2);
        files.insert(format!("big/file{i}.txt"), text.into_bytes());
        let t = base + i as i64 * 3600;
        let parents: Vec<_> = parent.into_iter().collect();
        let oid = b
            .commit("main", &parents, &files, &ALICE, t, &ALICE, t, &format!("add bulk file {i}"))
            .unwrap();
        parent = Some(oid);
        out.push(BulkCommit {
            hash: commit_hash(&oid.to_string()),
            marker,
            bytes: size,
        });
    }
    out
}

pub mod checks;
