//! Oracle comparisons that return a failure description instead of
//! panicking, so the acceptance runner can report them one per line.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use commitlink::domain::{from_unix, ChangeKind, TimeWindow};
use commitlink::git::AuthorQuery;

use super::*;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub const GLOBS: &[&str] = &[
    "**",
    "*",
    "*.md",
    "**/*.rs",
    "src/*",
    "src/**",
    "src/**/*.py",
    "docs/*.txt",
    "tests/data/f?.go",
    "**/r*_*",
    "nothing/**",
];

fn kind_letter(kind: ChangeKind) -> char {
    match kind {
        ChangeKind::Added => 'A',
        ChangeKind::Modified => 'M',
        ChangeKind::Deleted => 'D',
        ChangeKind::Renamed => 'R',
    }
}

fn oracle_touched(changes: &[OracleChange]) -> BTreeSet<String> {
    changes
        .iter()
        .flat_map(|c| std::iter::once(c.path.clone()).chain(c.old_path.clone()))
        .collect()
}

#[derive(Debug, Default)]
pub struct GitCheckStats {
    pub commits: usize,
    pub in_window: usize,
    pub files: usize,
    pub renames: usize,
    /// (commit, file) pairs checked in both directions.
    pub pairs: usize,
}

/// Compares every git function over `repo` against the `git` CLI, with the
/// default window set to `window`.
pub fn check_git_equivalence(repo: &Path, window: TimeWindow) -> Result<GitCheckStats, String> {
    let oracle = oracle_commits(repo);
    let rev_list: BTreeSet<String> = oracle_rev_list(repo).into_iter().collect();
    ensure!(
        rev_list == oracle.keys().cloned().collect::<BTreeSet<_>>(),
        "git log --all and rev-list --all disagree"
    );
    let (_repo, history, ex) = open_extractor(repo, window);

    // Reachable set and ordering.
    let mut expected_order: Vec<&OracleCommit> = oracle.values().collect();
    expected_order.sort_by(|a, b| (a.commit_time, &a.hash).cmp(&(b.commit_time, &b.hash)));
    let expected_order: Vec<String> = expected_order.iter().map(|c| c.hash.clone()).collect();
    ensure!(
        hashes(history.commits()) == expected_order,
        "unified history differs from rev-list ordered by (commit_time, hash)"
    );

    // Metadata.
    for c in oracle.values() {
        let meta = ex
            .commit_metadata(&commit_hash(&c.hash))
            .map_err(|e| format!("commit_metadata {}: {e}", c.hash))?;
        ensure!(
            (meta.author.name.clone(), meta.author.email.clone()) == c.author
                && (meta.committer.name.clone(), meta.committer.email.clone()) == c.committer
                && unix(&meta.commit_time) == c.commit_time
                && unix(&meta.author_time) == c.author_time
                && meta.message.trim_end() == c.message.trim_end(),
            "commit_metadata {} differs from git log",
            c.hash
        );
    }

    // Window filtering and pagination.
    let in_window: Vec<String> = expected_order
        .iter()
        .filter(|h| window.contains(&from_unix(oracle[*h].commit_time)))
        .cloned()
        .collect();
    for page_size in [1, 7, 20, 100] {
        let got = all_pages(page_size, |p| ex.list_commits(p, None));
        ensure!(
            hashes(&got) == in_window,
            "list_commits (page_size {page_size}) differs from the oracle window"
        );
    }
    ensure!(ex.count_commits(None) == in_window.len(), "count_commits differs");
    let everything = all_pages(100, |p| ex.list_commits(p, Some(TimeWindow::unbounded())));
    ensure!(
        hashes(&everything) == expected_order,
        "list_commits with an explicit unbounded window differs from rev-list"
    );

    // Authors.
    let authors: BTreeSet<(String, String)> = in_window.iter().map(|h| oracle[h].author.clone()).collect();
    let got: BTreeSet<(String, String)> = ex.list_authors().iter().map(|a| a.git_key()).collect();
    ensure!(got == authors, "list_authors differs: {got:?} vs {authors:?}");
    for (name, email) in &authors {
        let expected: Vec<String> = in_window
            .iter()
            .filter(|h| oracle[*h].author == (name.clone(), email.clone()))
            .cloned()
            .collect();
        let got = all_pages(3, |p| ex.commits_of_author(&AuthorQuery::exact(name, email), p));
        ensure!(hashes(&got) == expected, "commits_of_author({name}, {email}) differs");
    }

    // Diffs of every commit.
    let mut touched_by: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut stats = GitCheckStats {
        commits: oracle.len(),
        in_window: in_window.len(),
        ..GitCheckStats::default()
    };
    for c in oracle.values() {
        let expected = oracle_changes(repo, c);
        let diff = ex
            .commit_diff(&commit_hash(&c.hash))
            .map_err(|e| format!("commit_diff {}: {e}", c.hash))?;
        let mut got: Vec<OracleChange> = diff
            .files
            .iter()
            .map(|f| OracleChange {
                status: kind_letter(f.change_kind),
                path: f.path.clone(),
                old_path: f.old_path.clone(),
            })
            .collect();
        got.sort();
        let normalized: Vec<OracleChange> = expected
            .iter()
            .map(|o| OracleChange {
                status: if o.status == 'T' { 'M' } else { o.status },
                ..o.clone()
            })
            .collect();
        ensure!(
            got == normalized,
            "commit_diff {} changes differ:\n ours   {got:?}\n oracle {normalized:?}",
            c.hash
        );
        stats.renames += got.iter().filter(|g| g.status == 'R').count();

        let (mut added, mut removed, mut binary) = (0, 0, 0);
        for f in &diff.files {
            for hunk in &f.hunks {
                if hunk == "Binary files differ\n" {
                    binary += 1;
                    continue;
                }
                for line in hunk.split_inclusive('\n').skip(1) {
                    match line.as_bytes().first() {
                        Some(b'+') => added += 1,
                        Some(b'-') => removed += 1,
                        _ => {}
                    }
                }
            }
        }
        let numstat = oracle_numstat(repo, c);
        ensure!(
            (added, removed, binary) == numstat,
            "commit_diff {} line counts {:?} differ from numstat {numstat:?}",
            c.hash,
            (added, removed, binary)
        );
        touched_by.insert(c.hash.clone(), oracle_touched(&expected));
    }

    // Files touched inside the window, per glob.
    let window_files: BTreeSet<String> = in_window.iter().flat_map(|h| touched_by[h].clone()).collect();
    stats.files = window_files.len();
    for pattern in GLOBS {
        let expected: Vec<String> = window_files
            .iter()
            .filter(|f| glob_oracle(pattern, f))
            .cloned()
            .collect();
        let got = ex.list_files(pattern).map_err(|e| format!("list_files({pattern}): {e}"))?;
        ensure!(got == expected, "list_files({pattern}) differs:\n ours   {got:?}\n oracle {expected:?}");
    }

    // commits_on_file, and its agreement with commit_diff in both directions.
    let mut on_file: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for f in &window_files {
        let expected: Vec<String> = in_window
            .iter()
            .filter(|h| touched_by[*h].contains(f))
            .cloned()
            .collect();
        let got = all_pages(5, |p| ex.commits_on_file(f, p).unwrap());
        ensure!(hashes(&got) == expected, "commits_on_file({f}) differs");
        on_file.insert(f.clone(), hashes(&got).into_iter().collect());
    }
    for h in &in_window {
        let diff = ex.commit_diff(&commit_hash(h)).unwrap();
        let touched: BTreeSet<String> = diff
            .files
            .iter()
            .flat_map(|f| f.touched_paths().map(str::to_string))
            .collect();
        for f in &window_files {
            ensure!(
                touched.contains(f) == on_file[f].contains(h),
                "commit_diff({h}) and commits_on_file({f}) disagree"
            );
            stats.pairs += 1;
        }
    }
    Ok(stats)
}

/// A window covering roughly the middle third of `repo`'s history.
pub fn middle_window(repo: &Path) -> TimeWindow {
    let oracle = oracle_commits(repo);
    let mut times: Vec<i64> = oracle.values().map(|c| c.commit_time).collect();
    times.sort();
    let n = times.len();
    TimeWindow::new(from_unix(times[n / 3]), from_unix(times[2 * n / 3])).unwrap()
}

/// Commit hashes mentioned in a tool payload, in order.
pub fn payload_hashes(payload: &str) -> Vec<String> {
    payload
        .split(|c: char| !c.is_ascii_hexdigit())
        .filter(|w| w.len() == 40)
        .map(str::to_string)
        .collect()
}

pub fn synthetic_issue(created: i64, closed: Option<i64>) -> commitlink::issue::IssueSnapshot {
    use commitlink::domain::Author;
    use commitlink::issue::{IssueSnapshot, Platform};
    IssueSnapshot {
        platform: Platform::Github,
        key: "1".into(),
        url: "https://github.com/acme/generated/issues/1".into(),
        title: "synthetic".into(),
        description: String::new(),
        created_at: from_unix(created),
        closed_at: closed.map(from_unix),
        author: Author::tracker("dana", "dana"),
        comments: Vec::new(),
    }
}

/// Builds issues whose margins land exactly on, and one second past,
/// commit times of `repo`, then checks that every default query sees the
/// integer-arithmetic window and that explicit windows escape it.
pub fn check_lifespan(repo: &Path) -> Result<usize, String> {
    use commitlink::code::ProfileSet;
    use commitlink::git::safe_lifespan;
    use commitlink::registry::ToolCall;
    use commitlink::session::Workspace;
    use serde_json::json;
    use std::sync::Arc;

    const DAY: i64 = 86_400;
    let oracle = oracle_commits(repo);
    let mut times: Vec<i64> = oracle.values().map(|c| c.commit_time).collect();
    times.sort();
    times.dedup();
    let n = times.len();
    ensure!(n >= 10, "repository too small");
    let (a, b) = (times[n / 4], times[3 * n / 4]);
    let now = times[n - 1] + 30 * DAY;
    let cases: Vec<(i64, Option<i64>)> = vec![
        (a + 7 * DAY, Some(b - 7 * DAY)),
        (a + 7 * DAY + 1, Some(b - 7 * DAY - 1)),
        (a + 7 * DAY, None),
        (times[n / 2], Some(times[n / 2])),
    ];
    let repo_handle = Arc::new(commitlink::git::RepoHandle::open(repo).map_err(|e| e.to_string())?);
    let history = Arc::new(commitlink::git::UnifiedHistory::build(&repo_handle.lock()).map_err(|e| e.to_string())?);
    let profiles = Arc::new(ProfileSet::builtin().map_err(|e| e.to_string())?);
    let mut checked = 0;
    for (created, closed) in cases {
        let lo = created - 7 * DAY;
        let hi = match closed {
            Some(c) => c + 7 * DAY,
            None => now,
        };
        let mut expected: Vec<(i64, String)> = oracle
            .values()
            .filter(|c| lo <= c.commit_time && c.commit_time <= hi)
            .map(|c| (c.commit_time, c.hash.clone()))
            .collect();
        expected.sort();
        let expected: Vec<String> = expected.into_iter().map(|(_, h)| h).collect();
        ensure!(
            expected.len() < oracle.len(),
            "case ({created}, {closed:?}) covers the whole history"
        );

        let window = safe_lifespan(from_unix(created), closed.map(from_unix), from_unix(now));
        let (_r, _h, ex) = open_extractor(repo, window);
        let got = all_pages(100, |p| ex.list_commits(p, None));
        ensure!(
            hashes(&got) == expected,
            "lifespan for ({created}, {closed:?}) selects {} commits, oracle {}",
            got.len(),
            expected.len()
        );
        check_git_equivalence(repo, window)?;

        // Through the registry, as the model sees it.
        let ws = Workspace::new(
            synthetic_issue(created, closed),
            repo_handle.clone(),
            history.clone(),
            profiles.clone(),
            100,
            from_unix(now),
        )
        .map_err(|e| e.to_string())?;
        let mut routed = Vec::new();
        for page in 0.. {
            let res = ws
                .registry
                .route_call(&ToolCall::new("c", "list_commits", json!({"page": page, "page_size": 100})));
            let found = payload_hashes(&res.payload);
            if found.is_empty() {
                break;
            }
            routed.extend(found);
        }
        ensure!(routed == expected, "routed list_commits differs from the oracle window");
        let outside: Vec<&String> = oracle
            .values()
            .filter(|c| c.commit_time < lo || c.commit_time > hi)
            .map(|c| &c.hash)
            .collect();
        let res = ws.registry.route_call(&ToolCall::new(
            "c",
            "list_commits",
            json!({"since": "1970-01-01", "until": "2100-01-01", "page_size": 100}),
        ));
        let reached = payload_hashes(&res.payload);
        ensure!(
            outside.iter().all(|h| reached.contains(h)),
            "explicit window does not reach commits outside the lifespan"
        );
        let res = ws.registry.route_call(&ToolCall::new("c", "list_commits", json!({})));
        ensure!(
            res.payload.contains(&format!("; {} total", expected.len())),
            "count_commits payload `{}` lacks {}",
            res.payload,
            expected.len()
        );
        checked += 1;
    }
    Ok(checked)
}

/// Definitions each fixture source must expose, as (name, is_function).
pub fn expected_definitions(path: &str, later: bool) -> Vec<(&'static str, bool)> {
    match path {
        "src/lib.rs" => {
            let mut v = vec![
                ("add_one", true),
                ("Point", false),
                ("norm", true),
                ("Shape", false),
                ("Area", false),
                ("area", true),
                ("fmt", true),
            ];
            if later {
                v.push(("add_two", true));
            }
            v
        }
        "tools/loader.py" => vec![("Loader", false), ("load", true), ("main", true), ("poll", true)],
        "cmd/server/main.go" => vec![("Server", false), ("Start", true), ("main", true), ("Handler", false)],
        _ => Vec::new(),
    }
}

/// Every defined symbol of the code fixture comes back verbatim from the
/// blob and matches the line fetcher over its span; absent symbols, files,
/// commits, and unsupported languages produce the matching error.
pub fn check_code_navigator(code: &commitlink::fixtures::CodeRepo) -> Result<usize, String> {
    use commitlink::code::{CodeError, CodeLocation, CodeNavigator, DefinitionKind, ProfileSet};
    use std::sync::Arc;

    let repo = Arc::new(commitlink::git::RepoHandle::open(&code.path).map_err(|e| e.to_string())?);
    let nav = CodeNavigator::new(repo, Arc::new(ProfileSet::builtin().map_err(|e| e.to_string())?));
    let mut checked = 0;
    for (commit, later) in [(&code.k1, false), (&code.k2, true)] {
        let tree = git(&code.path, &["ls-tree", "-r", "--name-only", commit.as_str()]);
        for path in ["src/lib.rs", "tools/loader.py", "cmd/server/main.go"] {
            if !tree.lines().any(|l| l == path) {
                continue;
            }
            let blob = git(&code.path, &["show", &format!("{commit}:{path}")]);
            let (defs, parse_failed) = nav.all_definitions(commit, path).map_err(|e| e.to_string())?;
            ensure!(!parse_failed, "{path} at {commit} did not parse");
            let mut got: Vec<(String, bool)> = defs
                .iter()
                .map(|d| (d.name.clone(), d.kind == DefinitionKind::Function))
                .collect();
            let mut want: Vec<(String, bool)> = expected_definitions(path, later)
                .into_iter()
                .map(|(n, f)| (n.to_string(), f))
                .collect();
            got.sort();
            want.sort();
            ensure!(got == want, "{path} at {commit}: definitions {got:?}, expected {want:?}");

            for (name, _) in &want {
                let lookup = nav
                    .fetch_definition(&CodeLocation::new(commit.clone(), path, name.as_str()))
                    .map_err(|e| format!("fetch_definition {path}:{name}: {e}"))?;
                ensure!(!lookup.matches.is_empty(), "{path}:{name} has no match");
                for d in &lookup.matches {
                    ensure!(d.name == *name, "{path}:{name} matched {}", d.name);
                    ensure!(blob.contains(&d.text), "{path}:{name} text is not a blob substring");
                    ensure!(d.text.contains(name.as_str()), "{path}:{name} text lacks its name");
                    let lines = nav
                        .fetch_lines_in_file(commit, path, d.start_line as u64, d.end_line as u64)
                        .map_err(|e| e.to_string())?;
                    ensure!(!lines.clamped, "{path}:{name} span runs past the file");
                    let joined: Vec<&str> = lines.lines.iter().map(|(_, l)| l.as_str()).collect();
                    ensure!(
                        joined.join("\n") == d.text.trim_end_matches('\n'),
                        "{path}:{name} disagrees with fetch_lines_in_file over {}..{}",
                        d.start_line,
                        d.end_line
                    );
                    // Independent span check from the raw blob.
                    let raw: Vec<&str> = blob.split('\n').collect();
                    ensure!(
                        raw[d.start_line - 1..d.end_line].join("\n") == d.text.trim_end_matches('\n'),
                        "{path}:{name} span does not match the blob lines"
                    );
                }
                checked += 1;
            }
        }
    }

    let expect_err = |loc: CodeLocation, what: &str, ok: &dyn Fn(&CodeError) -> bool| -> Result<(), String> {
        match nav.fetch_definition(&loc) {
            Err(e) if ok(&e) => Ok(()),
            Err(e) => Err(format!("{what}: wrong error {e}")),
            Ok(l) => Err(format!("{what}: unexpectedly found {} matches", l.matches.len())),
        }
    };
    expect_err(
        CodeLocation::new(code.k1.clone(), "src/lib.rs", "add_two"),
        "add_two before it existed",
        &|e| matches!(e, CodeError::NameNotFound { available, .. } if available.contains(&"add_one".to_string())),
    )?;
    expect_err(
        CodeLocation::new(code.k2.clone(), "tools/loader.py", "main"),
        "loader.py after deletion",
        &|e| matches!(e, CodeError::FileNotFound { .. }),
    )?;
    expect_err(
        CodeLocation::new(code.k1.clone(), "notes.txt", "not_code"),
        "plain text file",
        &|e| matches!(e, CodeError::UnsupportedLanguage { .. }),
    )?;
    expect_err(
        CodeLocation::new(commit_hash(&"0".repeat(40)), "src/lib.rs", "add_one"),
        "unknown commit",
        &|e| matches!(e, CodeError::CommitNotFound(_)),
    )?;
    expect_err(
        CodeLocation::new(code.k1.clone(), "src/missing.rs", "x"),
        "missing file",
        &|e| matches!(e, CodeError::FileNotFound { .. }),
    )?;
    ensure!(
        matches!(
            nav.fetch_lines_in_file(&code.k1, "src/lib.rs", 500, 510),
            Err(CodeError::StartBeyondEof { .. })
        ),
        "lines past the end are not rejected"
    );
    ensure!(
        matches!(
            nav.fetch_lines_in_file(&code.k1, "src/lib.rs", 5, 2),
            Err(CodeError::InvalidRange { .. })
        ),
        "inverted range is not rejected"
    );
    Ok(checked)
}

/// Random link sets over generated repositories, checked against a sort of
/// `git log` commit times. Returns (sets checked, sets containing a tie).
pub fn check_adjustment(repos: &[(String, &Path)], sets: usize, seed: u64) -> Result<(usize, usize), String> {
    use commitlink::eval::{adjust_ground_truth, DatasetRecord};
    use commitlink::git::{RepoHandle, UnifiedHistory};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut oracles = BTreeMap::new();
    let mut histories = BTreeMap::new();
    for (id, path) in repos {
        oracles.insert(id.clone(), oracle_commits(path));
        let handle = RepoHandle::open(path).map_err(|e| e.to_string())?;
        let history = UnifiedHistory::build(&handle.lock()).map_err(|e| e.to_string())?;
        histories.insert(id.clone(), history);
    }
    let mut records = Vec::new();
    let mut expected = Vec::new();
    let mut with_tie = 0;
    for i in 0..sets {
        let (id, _) = repos.choose(&mut rng).expect("repos");
        let oracle = &oracles[id];
        let all: Vec<&OracleCommit> = oracle.values().collect();
        let mut by_time: BTreeMap<i64, Vec<&OracleCommit>> = BTreeMap::new();
        for c in &all {
            by_time.entry(c.commit_time).or_default().push(c);
        }
        let ties: Vec<&Vec<&OracleCommit>> = by_time.values().filter(|v| v.len() > 1).collect();
        let mut links: Vec<&OracleCommit> = if i % 4 == 0 && !ties.is_empty() {
            // Force a tie at the top: a tied group plus older commits.
            let group = ties.choose(&mut rng).expect("ties");
            let t = group[0].commit_time;
            let mut v: Vec<&OracleCommit> = group.to_vec();
            let older: Vec<&OracleCommit> = all.iter().copied().filter(|c| c.commit_time < t).collect();
            let extra = rng.gen_range(0..=older.len().min(3));
            v.extend(older.choose_multiple(&mut rng, extra));
            v
        } else {
            let n = rng.gen_range(1..=6.min(all.len()));
            all.choose_multiple(&mut rng, n).copied().collect()
        };
        links.shuffle(&mut rng);

        let mut sorted = links.clone();
        sorted.sort_by(|a, b| (a.commit_time, &a.hash).cmp(&(b.commit_time, &b.hash)));
        let top = sorted.last().expect("non-empty");
        if sorted.iter().filter(|c| c.commit_time == top.commit_time).count() > 1 {
            with_tie += 1;
        }
        expected.push(top.hash.clone());
        records.push(DatasetRecord {
            issue_id: format!("I-{i}"),
            issue_url: format!("https://github.com/acme/x/issues/{i}"),
            repo_id: id.clone(),
            true_links: links.iter().map(|c| commit_hash(&c.hash)).collect(),
        });
    }
    let lookup = |repo: &str, h: &commitlink::domain::CommitHash| histories.get(repo)?.get(h).map(|c| c.commit_time);
    let (kept, excluded) = adjust_ground_truth(&records, lookup);
    ensure!(excluded.is_empty(), "unexpected exclusions {excluded:?}");
    ensure!(kept.len() == sets, "kept {} of {sets}", kept.len());
    for (k, want) in kept.iter().zip(&expected) {
        ensure!(
            k.resolving_commit.as_str() == want,
            "{}: chose {}, oracle {want}",
            k.issue_id,
            k.resolving_commit
        );
    }
    // Applying the adjustment to its own output changes nothing.
    let again: Vec<DatasetRecord> = kept.iter().map(DatasetRecord::from).collect();
    let (twice, _) = adjust_ground_truth(&again, lookup);
    ensure!(twice == kept, "adjustment is not idempotent");
    Ok((sets, with_tie))
}

/// Hit@k against a brute-force rank oracle on random instances, plus
/// monotonicity in k. Returns the number of instances.
pub fn check_hit_at_k(instances: usize, seed: u64) -> Result<usize, String> {
    use commitlink::eval::{batch_hit_at_k, hit_at_k};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queries = Vec::new();
    for _ in 0..instances {
        let n = rng.gen_range(1..=150usize);
        let mut ranked: Vec<u32> = (0..n as u32).map(|i| i * 3 + 1).collect();
        ranked.shuffle(&mut rng);
        let truth: u32 = if rng.gen_bool(0.2) { 0 } else { *ranked.choose(&mut rng).expect("n >= 1") };
        // Brute-force rank: count the candidates strictly before the truth.
        let rank = ranked
            .iter()
            .enumerate()
            .find_map(|(i, c)| (*c == truth).then_some(i + 1))
            .unwrap_or(usize::MAX);
        let mut prev = 0;
        for k in 1..=160usize {
            let got = hit_at_k(&ranked, &truth, k);
            let want = u32::from(rank <= k);
            ensure!(got == want, "hit_at_k(k={k}) = {got}, oracle {want} (rank {rank}, n {n})");
            ensure!(got >= prev, "hit_at_k decreased at k={k}");
            prev = got;
        }
        queries.push((ranked, truth));
    }
    let oracle_mean = |k: usize| {
        queries
            .iter()
            .filter(|(r, t)| r.iter().take(k).any(|c| c == t))
            .count() as f64
            / queries.len() as f64
    };
    for k in [1, 5, 10, 50] {
        let got = batch_hit_at_k(&queries, k);
        ensure!((got - oracle_mean(k)).abs() < 1e-12, "batch Hit@{k} {got} vs {}", oracle_mean(k));
    }
    Ok(instances)
}

/// Mean Hit@10 of uniformly shuffled rankings over 100 candidates.
pub fn random_ranking_hit_at_10(trials: usize, seed: u64) -> f64 {
    use commitlink::eval::batch_hit_at_k;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let queries: Vec<(Vec<u32>, u32)> = (0..trials)
        .map(|_| {
            let mut ranked: Vec<u32> = (0..100).collect();
            ranked.shuffle(&mut rng);
            (ranked, 42)
        })
        .collect();
    batch_hit_at_k(&queries, 10)
}

/// Output of one CLI invocation.
pub struct CliRun {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn run_cli(bin: &Path, args: &[&str]) -> CliRun {
    let out = std::process::Command::new(bin)
        .args(args)
        .env_remove("OPENAI_API_KEY")
        .env_remove("GITHUB_TOKEN")
        .output()
        .expect("binary runs");
    CliRun {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// A script that exercises git, issue, code, and feedback calls before
/// finishing with `finish_with`.
pub fn rich_script(fix: &commitlink::fixtures::FixRepo) -> String {
    use serde_json::json;
    script_lines(&[
        json!({"call": "issue_title"}),
        json!({"calls": [{"call": "issue_participants"}, {"call": "list_authors"}]}),
        json!({"call": "commits_of_author", "args": {"name": "alice"}}),
        json!({"call": "list_files", "args": {"pattern": "src/**"}}),
        json!({"call": "commits_on_file", "args": {"file_name": "src/lib.rs"}}),
        json!({"call": "commit_diff", "args": {"commit_hash": fix.c4.as_str()}}),
        json!({"call": "feedback", "args": {"call_id": "$last", "verdict": "discard"}}),
        json!({"call": "fetch_definition", "args": {"commit": fix.c4.as_str(), "path": "src/lib.rs", "name": "parse_size"}}),
        json!({"text": "Looks like C4."}),
        json!({"call": "finish", "args": {"commit_hash": fix.c4.as_str()}}),
    ])
}

/// Runs `link` three times with a frozen clock and compares every output
/// byte for byte. Returns the number of compared artifacts.
pub fn check_link_determinism(bin: &Path) -> Result<usize, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let tree = commitlink::fixtures::write_fixture_tree(root).map_err(|e| e.to_string())?;
    let script = root.join("rich.jsonl");
    std::fs::write(&script, rich_script(&tree.fix)).map_err(|e| e.to_string())?;
    let mut outputs: Vec<Vec<Vec<u8>>> = Vec::new();
    for i in 0..3 {
        let out = root.join(format!("out{i}"));
        std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
        let p = |name: &str| out.join(name).display().to_string();
        let run = run_cli(
            bin,
            &[
                "link",
                "--issue-url",
                commitlink::fixtures::FIX_ISSUE_URL,
                "--repo",
                &tree.fix.path.display().to_string(),
                "--backend",
                "scripted",
                "--script",
                &script.display().to_string(),
                "--http-fixtures",
                &tree.http.display().to_string(),
                "--frozen-clock",
                "2024-06-01T00:00:00Z",
                "--feedback-threshold-bytes",
                "200",
                "--out",
                &p("record.json"),
                "--call-log",
                &p("calls.jsonl"),
                "--metrics",
                &p("metrics.json"),
            ],
        );
        ensure!(run.code == 0, "link run {i} exited {}: {}", run.code, run.stderr);
        let mut files = vec![run.stdout.into_bytes()];
        for name in ["record.json", "calls.jsonl", "metrics.json"] {
            files.push(std::fs::read(out.join(name)).map_err(|e| format!("{name}: {e}"))?);
        }
        outputs.push(files);
    }
    let record = String::from_utf8_lossy(&outputs[0][0]).to_string();
    ensure!(record.contains("\"outcome\":\"finished\""), "unexpected record {record}");
    ensure!(
        String::from_utf8_lossy(&outputs[0][2]).contains("\"verdict\":\"discard\""),
        "call log lacks the discard verdict"
    );
    for i in 1..3 {
        for (k, name) in ["stdout", "record.json", "calls.jsonl", "metrics.json"].iter().enumerate() {
            ensure!(outputs[i][k] == outputs[0][k], "{name} differs between run 0 and run {i}");
        }
    }
    Ok(outputs[0].len())
}

pub const BULK_SIZES: &[usize] = &[
    1_000, 2_000, 41_000, 55_000, 70_000, 90_000, 100_000, 110_000, 120_000, 130_000,
];

/// 25 scripts that outlast the iteration budget and 25 that outgrow the
/// token budget. Returns the number of scripts checked.
pub fn check_budgets(repo: &Path, bulk: &[BulkCommit]) -> Result<usize, String> {
    use commitlink::domain::{Budgets, ExhaustedBudget, SessionOutcome};
    use serde_json::{json, Value};

    let ws = workspace(commitlink::fixtures::FIX_ISSUE_URL, repo, 20);
    let small = [
        json!({"call": "issue_title"}),
        json!({"call": "list_authors"}),
        json!({"call": "issue_comments", "args": {"page": 0}}),
        json!({"call": "commits_of_author", "args": {"name": "alice", "page_size": 5}}),
        json!({"text": "let me think"}),
        json!({"call": "no_such_tool"}),
        json!({"call": "finish", "args": {"commit_hash": "0".repeat(40)}}),
        json!({"call": "feedback", "args": {"call_id": "call_1", "verdict": "discard"}}),
        json!({"calls": [{"call": "issue_author"}, {"call": "list_files", "args": {"pattern": "**"}}]}),
        json!({"call": "commit_diff", "args": {"commit_hash": bulk[0].hash.as_str()}}),
    ];
    let mut checked = 0;
    for i in 0..25 {
        let len = 21 + i;
        let lines: Vec<Value> = (0..len).map(|j| small[(i + j * 7) % small.len()].clone()).collect();
        let run = run_script(&ws, &script_lines(&lines), Budgets::default());
        ensure!(
            run.outcome == SessionOutcome::BudgetExhausted(ExhaustedBudget::Iterations),
            "iteration script {i}: outcome {:?}",
            run.outcome
        );
        ensure!(run.state.iteration == 20, "iteration script {i}: {} iterations", run.state.iteration);
        ensure!(run.requests.len() == 20, "iteration script {i}: {} model turns", run.requests.len());
        checked += 1;
    }

    let big: Vec<&BulkCommit> = bulk.iter().filter(|b| b.bytes >= 41_000).collect();
    for i in 0..25 {
        let mut lines: Vec<Value> = Vec::new();
        let mut budgets = Budgets::default();
        let diff = |b: &BulkCommit| json!({"call": "commit_diff", "args": {"commit_hash": b.hash.as_str()}});
        match i % 3 {
            0 => {
                for k in 0..20 {
                    lines.push(diff(big[(i + k) % big.len()]));
                    lines.push(json!({"call": "feedback", "args": {"call_id": "$last", "verdict": "preserve"}}));
                }
            }
            1 => {
                for k in 0..20 {
                    let calls: Vec<Value> = (0..6)
                        .map(|m| {
                            let b = big[(i + k * 6 + m) % big.len()];
                            json!({"call": "commit_diff", "args": {"commit_hash": b.hash.as_str()}})
                        })
                        .collect();
                    lines.push(json!({ "calls": calls }));
                }
            }
            _ => {
                budgets = Budgets::new(20, 40_000 + 2_000 * i as u64, 40_000).map_err(|e| e.to_string())?;
                for k in 0..20 {
                    lines.push(json!({"call": "issue_title"}));
                    lines.push(diff(big[(i + k) % big.len()]));
                    lines.push(json!({"call": "feedback", "args": {"call_id": "$last", "verdict": "preserve"}}));
                }
            }
        }
        let run = run_script(&ws, &script_lines(&lines), budgets);
        let max = budgets.max_total_tokens;
        ensure!(
            run.outcome == SessionOutcome::BudgetExhausted(ExhaustedBudget::Tokens),
            "token script {i}: outcome {:?} after {} iterations, {} tokens",
            run.outcome,
            run.state.iteration,
            run.state.total_tokens()
        );
        ensure!(run.state.total_tokens() > max, "token script {i}: stopped under the limit");
        ensure!(run.state.iteration <= 20, "token script {i}: {} iterations", run.state.iteration);
        let trace = &run.state.ledger_trace;
        ensure!(
            trace[..trace.len() - 1].iter().all(|t| *t <= max),
            "token script {i}: continued after passing the limit"
        );
        ensure!(run.requests.len() as u32 == run.state.iteration, "token script {i}: extra model turns");
        checked += 1;
    }
    Ok(checked)
}

/// Oversized results discarded at varying distances: the payload never
/// reaches the model again and the ledger drops at the discard iteration.
pub fn check_feedback_pruning(repo: &Path, bulk: &[BulkCommit]) -> Result<usize, String> {
    use commitlink::domain::Budgets;
    use commitlink::llm::{estimate_tokens, omitted_notice, TurnContent};
    use serde_json::{json, Value};

    let ws = workspace(commitlink::fixtures::FIX_ISSUE_URL, repo, 20);
    let big: Vec<&BulkCommit> = bulk.iter().filter(|b| b.bytes >= 41_000).collect();
    let mut checked = 0;
    for i in 0..24 {
        let target = big[i % big.len()];
        let delay = i % 2; // intervening turns before the verdict
        let mut lines: Vec<Value> = vec![json!({"call": "issue_title"})];
        let call_id;
        if i % 3 == 2 {
            lines.push(json!({"calls": [
                {"call": "issue_author"},
                {"call": "commit_diff", "args": {"commit_hash": target.hash.as_str()}}
            ]}));
            call_id = "call_3".to_string();
        } else {
            lines.push(json!({"call": "commit_diff", "args": {"commit_hash": target.hash.as_str()}}));
            call_id = "call_2".to_string();
        }
        for _ in 0..delay {
            lines.push(json!({"call": "list_authors"}));
        }
        lines.push(json!({"call": "feedback", "args": {"call_id": call_id, "verdict": "discard"}}));
        lines.push(json!({"call": "issue_created_at"}));
        lines.push(json!({"call": "give_up"}));
        let run = run_script(&ws, &script_lines(&lines), Budgets::default());

        // Iterations are 1-based; the verdict turn is 3 + delay.
        let discard_iter = 3 + delay;
        let record = run
            .state
            .call_log
            .iter()
            .find(|c| c.call_id == call_id)
            .ok_or(format!("case {i}: {call_id} not logged"))?;
        ensure!(record.byte_size > 40_000, "case {i}: result of {} bytes", record.byte_size);
        ensure!(
            run.state
                .call_log
                .iter()
                .any(|c| c.iteration as usize == discard_iter && c.verdict == Some(commitlink::llm::Verdict::Discard)),
            "case {i}: discard verdict not applied at iteration {discard_iter}"
        );
        let notice = omitted_notice(&call_id, record.byte_size);
        let pruned = run.state.conversation.turns().iter().zip(run.state.conversation.ledger().estimates()).find_map(
            |(t, est)| match &t.content {
                TurnContent::ToolResult { result } if result.call_id == call_id => Some((result.clone(), *est)),
                _ => None,
            },
        );
        let (result, est) = pruned.ok_or(format!("case {i}: result turn missing"))?;
        ensure!(result.pruned && result.payload == notice, "case {i}: payload not replaced");
        ensure!(est == estimate_tokens(&notice), "case {i}: ledger entry not recomputed");
        for (n, body) in run.requests.iter().enumerate() {
            // Request n is sent before iteration n + 1.
            let present = body.contains(&target.marker);
            let expected = n + 1 > 2 && n + 1 <= discard_iter;
            ensure!(
                present == expected,
                "case {i}: payload {} in request {}",
                if present { "present" } else { "absent" },
                n + 1
            );
        }
        let trace = &run.state.ledger_trace;
        ensure!(
            trace[discard_iter - 1] < trace[discard_iter - 2],
            "case {i}: ledger {} -> {} at the discard step",
            trace[discard_iter - 2],
            trace[discard_iter - 1]
        );
        checked += 1;
    }
    Ok(checked)
}
