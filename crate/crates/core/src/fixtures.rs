//! Deterministic fixtures: small repositories with fixed signatures and
//! times, recorded tracker responses, session scripts, and a seeded random
//! repository generator for oracle tests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use git2::{Index, IndexEntry, IndexTime, Oid, Repository, Signature, Time};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::domain::{parse_time, CommitHash, Timestamp};
use crate::http::{render_fixture, HttpResponse, Method};
use crate::issue::parse_issue_url;

pub type Files = BTreeMap<String, Vec<u8>>;

fn ts(raw: &str) -> i64 {
    parse_time(raw).expect("fixture timestamp").timestamp()
}

fn hash(oid: Oid) -> CommitHash {
    CommitHash::parse(&oid.to_string()).expect("oid is a hash")
}

/// Writes commits straight into the object store of a bare repository.
pub struct RepoBuilder {
    repo: Repository,
}

pub struct Person<'a> {
    pub name: &'a str,
    pub email: &'a str,
}

impl RepoBuilder {
    pub fn init_bare(path: &Path) -> Result<Self, git2::Error> {
        let repo = Repository::init_bare(path)?;
        repo.set_head("refs/heads/main")?;
        Ok(Self { repo })
    }

    pub fn repo(&self) -> &Repository {
        &self.repo
    }

    pub fn path(&self) -> PathBuf {
        self.repo.path().to_path_buf()
    }

    fn tree(&self, files: &Files) -> Result<Oid, git2::Error> {
        let mut index = Index::new()?;
        for (path, content) in files {
            let blob = self.repo.blob(content)?;
            index.add(&IndexEntry {
                ctime: IndexTime::new(0, 0),
                mtime: IndexTime::new(0, 0),
                dev: 0,
                ino: 0,
                mode: 0o100644,
                uid: 0,
                gid: 0,
                file_size: content.len() as u32,
                id: blob,
                flags: path.len().min(0xfff) as u16,
                flags_extended: 0,
                path: path.as_bytes().to_vec(),
            })?;
        }
        index.write_tree_to(&self.repo)
    }

    /// Commits `files` as the full tree and moves `refs/heads/<branch>`.
    #[allow(clippy::too_many_arguments)]
    pub fn commit(
        &self,
        branch: &str,
        parents: &[Oid],
        files: &Files,
        author: &Person<'_>,
        author_time: i64,
        committer: &Person<'_>,
        commit_time: i64,
        message: &str,
    ) -> Result<Oid, git2::Error> {
        let tree = self.repo.find_tree(self.tree(files)?)?;
        let a = Signature::new(author.name, author.email, &Time::new(author_time, 0))?;
        let c = Signature::new(committer.name, committer.email, &Time::new(commit_time, 0))?;
        let parents: Vec<git2::Commit<'_>> = parents
            .iter()
            .map(|p| self.repo.find_commit(*p))
            .collect::<Result<_, _>>()?;
        let parent_refs: Vec<&git2::Commit<'_>> = parents.iter().collect();
        let oid = self.repo.commit(None, &a, &c, message, &tree, &parent_refs)?;
        self.repo
            .reference(&format!("refs/heads/{branch}"), oid, true, "fixture")?;
        Ok(oid)
    }
}

pub const ALICE: Person<'static> = Person {
    name: "Alice Liddell",
    email: "alice@example.com",
};
pub const BOB: Person<'static> = Person {
    name: "Bob Stone",
    email: "bob@example.com",
};

pub const FIX_ISSUE_URL: &str = "https://github.com/acme/widget/issues/42";
pub const FIX_SECOND_ISSUE_URL: &str = "https://github.com/acme/widget/issues/43";
pub const FIX_OPEN_ISSUE_URL: &str = "https://github.com/acme/widget/issues/44";
pub const FIX_JIRA_URL: &str = "https://issues.example.org/browse/WID-7";

pub const APP_RS_V1: &str = "fn main() {\n    println!(\"widget\");\n}\n";
pub const APP_RS_V2: &str =
    "fn main() {\n    let config = std::env::args().nth(1).unwrap_or_default();\n    if config.is_empty() {\n        return;\n    }\n    println!(\"widget {config}\");\n}\n";
pub const LIB_RS: &str = "/// Parses a widget size.\n/// Returns None for empty input.\npub fn parse_size(raw: &str) -> Option<u32> {\n    raw.trim().parse().ok()\n}\n\nfn helper() -> u32 {\n    7\n}\n\n/// A widget.\npub struct Widget {\n    pub size: u32,\n}\n";

/// The four-commit repository used across tests:
///
/// ```text
/// main: C1 (alice, adds src/app.rs) - C2 (alice, adds README.md) - C3 (bob, edits src/app.rs)
/// feat:                                 \- C4 (alice, adds src/lib.rs)
/// ```
#[derive(Debug, Clone)]
pub struct FixRepo {
    pub path: PathBuf,
    pub c1: CommitHash,
    pub c2: CommitHash,
    pub c3: CommitHash,
    pub c4: CommitHash,
}

pub fn build_fix_repo(path: &Path) -> Result<FixRepo, git2::Error> {
    let b = RepoBuilder::init_bare(path)?;
    let mut files = Files::new();
    files.insert("src/app.rs".into(), APP_RS_V1.into());
    let t1 = ts("2024-03-02T10:00:00Z");
    let c1 = b.commit("main", &[], &files, &ALICE, t1, &ALICE, t1, "Add widget binary")?;

    files.insert("README.md".into(), b"# widget\n".to_vec());
    let t2 = ts("2024-03-03T10:00:00Z");
    let c2 = b.commit("main", &[c1], &files, &ALICE, t2, &ALICE, t2, "Add readme")?;

    let mut feat = files.clone();
    files.insert("src/app.rs".into(), APP_RS_V2.into());
    let t3 = ts("2024-03-04T10:00:00Z");
    let c3 = b.commit(
        "main",
        &[c2],
        &files,
        &BOB,
        t3,
        &BOB,
        t3,
        "Handle empty config\n\nThe binary exited with a panic when no config was given.",
    )?;

    feat.insert("src/lib.rs".into(), LIB_RS.into());
    let t4 = ts("2024-03-05T10:00:00Z");
    let c4 = b.commit("feat", &[c2], &feat, &ALICE, t4, &ALICE, t4, "Add size parser (fixes #42)")?;

    Ok(FixRepo {
        path: b.path(),
        c1: hash(c1),
        c2: hash(c2),
        c3: hash(c3),
        c4: hash(c4),
    })
}

/// Commit-time bounds of each fixture issue, as recorded in the responses.
pub struct IssueTimes {
    pub url: &'static str,
    pub created_at: Timestamp,
    pub closed_at: Option<Timestamp>,
}

pub fn fixture_issue_times() -> Vec<IssueTimes> {
    let t = |s: &str| parse_time(s).expect("fixture time");
    vec![
        IssueTimes {
            url: FIX_ISSUE_URL,
            created_at: t("2024-03-02T09:00:00Z"),
            closed_at: Some(t("2024-03-05T18:00:00Z")),
        },
        IssueTimes {
            url: FIX_SECOND_ISSUE_URL,
            created_at: t("2024-03-01T08:00:00Z"),
            closed_at: Some(t("2024-03-04T12:00:00Z")),
        },
        IssueTimes {
            url: FIX_OPEN_ISSUE_URL,
            created_at: t("2024-03-03T08:00:00Z"),
            closed_at: None,
        },
        IssueTimes {
            url: FIX_JIRA_URL,
            created_at: t("2024-02-20T09:30:00Z"),
            closed_at: Some(t("2024-03-04T11:00:00Z")),
        },
    ]
}

fn github_user(login: &str) -> serde_json::Value {
    json!({"login": login, "type": "User"})
}

/// Recorded tracker responses for the fixture issues, keyed by request.
pub fn fixture_http_responses() -> Vec<(Method, String, HttpResponse)> {
    use crate::issue::IssueRef;
    let mut out = Vec::new();
    let ok = |body: serde_json::Value| {
        let mut r = HttpResponse::new(200, serde_json::to_string_pretty(&body).expect("json"));
        r.headers.push(("Content-Type".into(), "application/json".into()));
        r
    };
    let github = |url: &str| match parse_issue_url(url).expect("fixture url") {
        IssueRef::Github {
            api_base,
            owner,
            repo,
            number,
        } => (
            crate::issue::github::issue_url(&api_base, &owner, &repo, number),
            crate::issue::github::comments_url(&api_base, &owner, &repo, number, 1),
        ),
        IssueRef::Jira { .. } => unreachable!("github fixture"),
    };

    let (issue, comments) = github(FIX_ISSUE_URL);
    out.push((
        Method::Get,
        issue,
        ok(json!({
            "number": 42,
            "title": "Widget panics when config is empty",
            "body": "Running `widget` without arguments panics in src/app.rs.\nExpected: exit quietly.",
            "user": github_user("dana"),
            "state": "closed",
            "created_at": "2024-03-02T09:00:00Z",
            "closed_at": "2024-03-05T18:00:00Z",
            "comments": 3
        })),
    ));
    out.push((
        Method::Get,
        comments,
        ok(json!([
            {"user": github_user("dana"), "body": "Stack trace attached.", "created_at": "2024-03-02T09:30:00Z"},
            {"user": github_user("alice"), "body": "I will add a parser for the size argument.", "created_at": "2024-03-03T11:00:00Z"},
            {"user": github_user("bob"), "body": "The empty case is handled on main now.", "created_at": "2024-03-04T12:00:00Z"}
        ])),
    ));

    let (issue, comments) = github(FIX_SECOND_ISSUE_URL);
    out.push((
        Method::Get,
        issue,
        ok(json!({
            "number": 43,
            "title": "Document the widget binary",
            "body": null,
            "user": github_user("erik"),
            "state": "closed",
            "created_at": "2024-03-01T08:00:00Z",
            "closed_at": "2024-03-04T12:00:00Z",
            "comments": 0
        })),
    ));
    out.push((Method::Get, comments, ok(json!([]))));

    let (issue, comments) = github(FIX_OPEN_ISSUE_URL);
    out.push((
        Method::Get,
        issue,
        ok(json!({
            "number": 44,
            "title": "Support sizes in centimetres",
            "body": "",
            "user": github_user("erik"),
            "state": "open",
            "created_at": "2024-03-03T08:00:00Z",
            "closed_at": null,
            "comments": 0
        })),
    ));
    out.push((Method::Get, comments, ok(json!([]))));

    let (base, key) = match parse_issue_url(FIX_JIRA_URL).expect("fixture url") {
        IssueRef::Jira { base, key } => (base, key),
        IssueRef::Github { .. } => unreachable!("jira fixture"),
    };
    out.push((
        Method::Get,
        crate::issue::jira::issue_url(&base, &key),
        ok(json!({
            "key": "WID-7",
            "fields": {
                "summary": "Empty config crashes the widget",
                "description": "Reported by operations.",
                "created": "2024-02-20T09:30:00.000+0000",
                "resolutiondate": "2024-03-04T11:00:00.000+0000",
                "creator": {"name": "ops", "displayName": "Ops Team"},
                "status": {"statusCategory": {"key": "done"}},
                "comment": {"total": 1, "maxResults": 1, "startAt": 0, "comments": [
                    {"author": {"name": "bob", "displayName": "Bob Stone"}, "body": "Fixed on main.", "created": "2024-03-04T10:30:00.000+0000"}
                ]}
            },
            "changelog": {"histories": []}
        })),
    ));
    out
}

pub fn write_http_fixtures(dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, (method, url, response)) in fixture_http_responses().iter().enumerate() {
        std::fs::write(dir.join(format!("{i:02}.http")), render_fixture(*method, url, response))?;
    }
    Ok(())
}

/// Script lines for a session that reads the title, looks at alice's
/// commits, and finishes with `commit`.
pub fn finish_script(commit: &CommitHash) -> String {
    format!(
        "{}\n{}\n{}\n",
        json!({"call": "issue_title"}),
        json!({"call": "commits_of_author", "args": {"name": "alice"}}),
        json!({"call": "finish", "args": {"commit_hash": commit.as_str()}})
    )
}

pub fn give_up_script(reason: &str) -> String {
    format!("{}\n", json!({"call": "give_up", "args": {"reason": reason}}))
}

/// Paths written by [`write_fixture_tree`].
#[derive(Debug, Clone)]
pub struct FixtureTree {
    pub root: PathBuf,
    pub repos: PathBuf,
    pub fix: FixRepo,
    pub http: PathBuf,
    pub scripts: PathBuf,
    pub dataset: PathBuf,
}

pub const FIX_REPO_ID: &str = "widget.git";

/// Builds everything `link` and `eval` need to run offline:
///
/// ```text
/// <root>/repos/widget.git   the FIX repository
/// <root>/http/              recorded tracker responses
/// <root>/scripts/           one session script per dataset issue
/// <root>/dataset.tsv        three issues over the FIX repository
/// ```
pub fn write_fixture_tree(root: &Path) -> Result<FixtureTree, Box<dyn std::error::Error + Send + Sync>> {
    let repos = root.join("repos");
    std::fs::create_dir_all(&repos)?;
    let fix = build_fix_repo(&repos.join(FIX_REPO_ID))?;
    let http = root.join("http");
    write_http_fixtures(&http)?;
    let scripts = root.join("scripts");
    std::fs::create_dir_all(&scripts)?;
    std::fs::write(scripts.join("WIDGET-42.jsonl"), finish_script(&fix.c4))?;
    std::fs::write(scripts.join("WIDGET-43.jsonl"), give_up_script("no commit mentions the docs"))?;
    std::fs::write(scripts.join("WID-7.jsonl"), finish_script(&fix.c3))?;
    let dataset = root.join("dataset.tsv");
    std::fs::write(
        &dataset,
        format!(
            "issue_id\tissue_url\trepo_id\ttrue_links\n\
             WIDGET-42\t{FIX_ISSUE_URL}\t{FIX_REPO_ID}\t{};{}\n\
             WIDGET-43\t{FIX_SECOND_ISSUE_URL}\t{FIX_REPO_ID}\t{};{}\n\
             WID-7\t{FIX_JIRA_URL}\t{FIX_REPO_ID}\t{}\n",
            fix.c2, fix.c4, fix.c1, fix.c3, fix.c3
        ),
    )?;
    Ok(FixtureTree {
        root: root.to_path_buf(),
        repos,
        fix,
        http,
        scripts,
        dataset,
    })
}

/// Source files in three languages plus one the navigator does not parse.
/// K2 changes the Rust file and deletes the Python one.
#[derive(Debug, Clone)]
pub struct CodeRepo {
    pub path: PathBuf,
    pub k1: CommitHash,
    pub k2: CommitHash,
}

pub const CODE_RS_V1: &str = "use std::fmt;\n\n/// Adds one.\npub fn add_one(x: i32) -> i32 {\n    x + 1\n}\n\n/// A point.\n#[derive(Debug)]\npub struct Point {\n    pub x: i32,\n    pub y: i32,\n}\n\nimpl Point {\n    /// Manhattan norm.\n    pub fn norm(&self) -> i32 {\n        self.x.abs() + self.y.abs()\n    }\n}\n\npub enum Shape {\n    Dot,\n    Line(i32),\n}\n\npub trait Area {\n    fn area(&self) -> i32;\n}\n\nimpl fmt::Display for Point {\n    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {\n        write!(f, \"({}, {})\", self.x, self.y)\n    }\n}\n";
pub const CODE_RS_V2_EXTRA: &str = "\n/// Added later.\npub fn add_two(x: i32) -> i32 {\n    add_one(add_one(x))\n}\n";
pub const CODE_PY: &str = "import os\n\n\nclass Loader:\n    \"\"\"Loads things.\"\"\"\n\n    def load(self, path):\n        \"\"\"Read one file.\"\"\"\n        return open(path).read()\n\n\ndef main():\n    return Loader().load(os.environ[\"CFG\"])\n\n\nasync def poll():\n    pass\n";
pub const CODE_GO: &str = "package main\n\nimport \"fmt\"\n\n// Server holds state.\ntype Server struct {\n\tPort int\n}\n\n// Start runs the server.\n// It never returns.\nfunc (s *Server) Start() {\n\tfmt.Println(s.Port)\n}\n\nfunc main() {\n\ts := Server{Port: 8080}\n\ts.Start()\n}\n\ntype Handler interface {\n\tServe()\n}\n";
pub const CODE_TXT: &str = "fn not_code() {}\n";

pub fn build_code_repo(path: &Path) -> Result<CodeRepo, git2::Error> {
    let b = RepoBuilder::init_bare(path)?;
    let mut files = Files::new();
    files.insert("src/lib.rs".into(), CODE_RS_V1.into());
    files.insert("tools/loader.py".into(), CODE_PY.into());
    files.insert("cmd/server/main.go".into(), CODE_GO.into());
    files.insert("notes.txt".into(), CODE_TXT.into());
    let t1 = ts("2024-05-01T12:00:00Z");
    let k1 = b.commit("main", &[], &files, &ALICE, t1, &ALICE, t1, "Initial sources")?;
    files.insert("src/lib.rs".into(), format!("{CODE_RS_V1}{CODE_RS_V2_EXTRA}").into_bytes());
    files.remove("tools/loader.py");
    let t2 = ts("2024-05-02T12:00:00Z");
    let k2 = b.commit("main", &[k1], &files, &BOB, t2, &BOB, t2, "Add add_two, drop loader")?;
    Ok(CodeRepo {
        path: b.path(),
        k1: hash(k1),
        k2: hash(k2),
    })
}

/// One commit made by [`generate_repo`].
#[derive(Debug, Clone)]
pub struct GeneratedCommit {
    pub hash: CommitHash,
    pub branch: String,
    pub parents: Vec<CommitHash>,
    pub author: (String, String),
    pub author_time: i64,
    pub commit_time: i64,
}

#[derive(Debug, Clone)]
pub struct GeneratedRepo {
    pub path: PathBuf,
    pub commits: Vec<GeneratedCommit>,
    pub branches: Vec<String>,
    /// Number of commits that include a pure rename.
    pub renames: usize,
    /// Number of merge commits.
    pub merges: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorConfig {
    pub commits: usize,
    pub max_branches: usize,
    /// Unix seconds of the first commit.
    pub start: i64,
    /// Average spacing between commit times.
    pub spacing_s: i64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            commits: 60,
            max_branches: 4,
            start: ts("2023-06-01T00:00:00Z"),
            spacing_s: 2 * 86_400,
        }
    }
}

const GEN_AUTHORS: &[(&str, &str)] = &[
    ("Alice Liddell", "alice@example.com"),
    ("Bob Stone", "bob@example.com"),
    ("Carol Diaz", "carol@dev.example.org"),
    ("dave", "dave@users.example.net"),
];
const GEN_DIRS: &[&str] = &["", "src", "src/util", "docs", "tests/data"];
const GEN_EXTS: &[&str] = &["rs", "py", "go", "md", "txt"];

struct Branch {
    name: String,
    tip: Oid,
    files: Files,
}

fn random_text(rng: &mut ChaCha8Rng, lines: usize) -> Vec<u8> {
    let mut out = String::new();
    for _ in 0..lines {
        let words = rng.gen_range(1..8);
        for w in 0..words {
            if w > 0 {
                out.push(' ');
            }
            out.push_str(&format!("w{:x}", rng.gen::<u32>()));
        }
        out.push('\n');
    }
    out.into_bytes()
}

/// A seeded repository with several branches, merges, pure renames,
/// deletions, large files, binary files, and commit times that are
/// mostly increasing with occasional ties and back-dated authors.
pub fn generate_repo(path: &Path, seed: u64, cfg: GeneratorConfig) -> Result<GeneratedRepo, git2::Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = RepoBuilder::init_bare(path)?;
    let mut commits = Vec::new();
    let (mut renames, mut merges) = (0, 0);
    let mut time = cfg.start;
    let mut file_counter = 0usize;

    let mut initial = Files::new();
    initial.insert("README.md".into(), b"# generated\n".to_vec());
    let who = GEN_AUTHORS[0];
    let person = Person {
        name: who.0,
        email: who.1,
    };
    let root = b.commit("main", &[], &initial, &person, time, &person, time, "initial")?;
    commits.push(GeneratedCommit {
        hash: hash(root),
        branch: "main".into(),
        parents: vec![],
        author: (who.0.into(), who.1.into()),
        author_time: time,
        commit_time: time,
    });
    let mut branches = vec![Branch {
        name: "main".into(),
        tip: root,
        files: initial,
    }];

    while commits.len() < cfg.commits {
        if branches.len() < cfg.max_branches && rng.gen_bool(0.12) {
            let from = rng.gen_range(0..branches.len());
            let name = format!("topic-{}", branches.len());
            let (tip, files) = (branches[from].tip, branches[from].files.clone());
            b.repo().reference(&format!("refs/heads/{name}"), tip, true, "branch")?;
            branches.push(Branch { name, tip, files });
            continue;
        }
        let bi = rng.gen_range(0..branches.len());
        let mut parents = vec![branches[bi].tip];
        let mut files = branches[bi].files.clone();
        let mut message = String::new();

        let merge_from = (branches.len() > 1 && rng.gen_bool(0.15))
            .then(|| {
                let other = rng.gen_range(0..branches.len());
                (other != bi && branches[other].tip != branches[bi].tip).then_some(other)
            })
            .flatten();
        if let Some(other) = merge_from {
            for (p, c) in &branches[other].files {
                files.insert(p.clone(), c.clone());
            }
            parents.push(branches[other].tip);
            message.push_str(&format!("Merge {} into {}\n", branches[other].name, branches[bi].name));
            merges += 1;
        } else {
            let mut touched: Vec<String> = Vec::new();
            let ops = rng.gen_range(1..=3);
            let mut renamed = false;
            for _ in 0..ops {
                let existing: Vec<String> = files.keys().filter(|p| !touched.contains(p)).cloned().collect();
                match rng.gen_range(0..10) {
                    0..=3 | 9 if !existing.is_empty() => {
                        let p = existing.choose(&mut rng).expect("non-empty").clone();
                        let lines = rng.gen_range(1..4);
                        let mut content = files[&p].clone();
                        content.extend(random_text(&mut rng, lines));
                        files.insert(p.clone(), content);
                        message.push_str(&format!("edit {p}\n"));
                        touched.push(p);
                    }
                    4 if existing.len() > 2 => {
                        let p = existing.choose(&mut rng).expect("non-empty").clone();
                        files.remove(&p);
                        message.push_str(&format!("delete {p}\n"));
                        touched.push(p);
                    }
                    5 | 6 if !existing.is_empty() => {
                        let old = existing.choose(&mut rng).expect("non-empty").clone();
                        file_counter += 1;
                        let dir = GEN_DIRS.choose(&mut rng).expect("dirs");
                        let file = old.rsplit('/').next().unwrap_or(&old);
                        let new = if dir.is_empty() {
                            format!("r{file_counter}_{file}")
                        } else {
                            format!("{dir}/r{file_counter}_{file}")
                        };
                        let content = files.remove(&old).expect("exists");
                        files.insert(new.clone(), content);
                        message.push_str(&format!("rename {old} -> {new}\n"));
                        touched.push(old);
                        touched.push(new);
                        renamed = true;
                    }
                    _ => {
                        file_counter += 1;
                        let dir = GEN_DIRS.choose(&mut rng).expect("dirs");
                        let ext = GEN_EXTS.choose(&mut rng).expect("exts");
                        let name = format!("f{file_counter}.{ext}");
                        let p = if dir.is_empty() { name } else { format!("{dir}/{name}") };
                        let content = match rng.gen_range(0..12) {
                            0 => random_text(&mut rng, 3000),
                            1 => {
                                let mut bin = vec![0u8, 159, 146, 150];
                                bin.extend(random_text(&mut rng, 4));
                                bin
                            }
                            _ => {
                                let lines = rng.gen_range(2..12);
                                random_text(&mut rng, lines)
                            }
                        };
                        files.insert(p.clone(), content);
                        message.push_str(&format!("add {p}\n"));
                        touched.push(p);
                    }
                }
            }
            if renamed {
                renames += 1;
            }
        }
        if files == branches[bi].files && parents.len() == 1 {
            continue;
        }

        // Mostly forward; sometimes a tie with the previous commit.
        if !rng.gen_bool(0.08) {
            time += rng.gen_range(cfg.spacing_s / 2..=cfg.spacing_s * 3 / 2);
        }
        let author_time = time - rng.gen_range(0..86_400);
        let who = GEN_AUTHORS.choose(&mut rng).expect("authors");
        let person = Person {
            name: who.0,
            email: who.1,
        };
        let oid = b.commit(
            &branches[bi].name,
            &parents,
            &files,
            &person,
            author_time,
            &person,
            time,
            message.trim_end(),
        )?;
        commits.push(GeneratedCommit {
            hash: hash(oid),
            branch: branches[bi].name.clone(),
            parents: parents.iter().map(|p| hash(*p)).collect(),
            author: (who.0.into(), who.1.into()),
            author_time,
            commit_time: time,
        });
        branches[bi].tip = oid;
        branches[bi].files = files;
    }

    Ok(GeneratedRepo {
        path: b.path(),
        commits,
        branches: branches.into_iter().map(|b| b.name).collect(),
        renames,
        merges,
    })
}
