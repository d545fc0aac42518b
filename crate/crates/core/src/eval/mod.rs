//! Ground-truth datasets, the last-resolving-commit adjustment, and Hit@K.

mod run;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use run::{
    run_eval, LinkRecord, OutcomeCounts, PipelineRunner, ProjectReport, RunReport, ScriptSource, SessionReport,
    SessionRow, SessionRunner,
};

use crate::domain::{CommitHash, Timestamp};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("link table: {0}")]
    Csv(#[from] csv::Error),
    #[error("link table has no `{0}` column")]
    MissingColumn(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub issue_id: String,
    pub issue_url: String,
    pub repo_id: String,
    pub true_links: Vec<CommitHash>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub skipped: Vec<SkippedLine>,
}

/// Parses the tab-separated dataset format:
///
/// ```text
/// # issue_id  issue_url                                     repo_id  true_links
/// CALCITE-1   https://issues.apache.org/jira/browse/CALCITE-1  calcite  <hash>;<hash>
/// ```
///
/// Blank lines, `#` comments, and a leading `issue_id` header are ignored.
/// Malformed lines are skipped with a warning and listed in `skipped`.
pub fn parse_dataset(text: &str) -> Dataset {
    let mut out = Dataset::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').map(str::trim).collect();
        if fields[0] == "issue_id" && out.records.is_empty() {
            continue;
        }
        match parse_line(&fields) {
            Ok(record) => out.records.push(record),
            Err(reason) => {
                log::warn!("dataset line {line_no} skipped: {reason}");
                out.skipped.push(SkippedLine { line: line_no, reason });
            }
        }
    }
    out
}

fn parse_line(fields: &[&str]) -> Result<DatasetRecord, String> {
    if fields.len() != 4 {
        return Err(format!("expected 4 tab-separated fields, found {}", fields.len()));
    }
    if fields[..3].iter().any(|f| f.is_empty()) {
        return Err("empty issue id, URL, or repo id".into());
    }
    let mut true_links = Vec::new();
    for raw in fields[3].split(';').map(str::trim).filter(|s| !s.is_empty()) {
        true_links.push(CommitHash::parse(raw).map_err(|e| e.to_string())?);
    }
    if true_links.is_empty() {
        return Err("no true links".into());
    }
    Ok(DatasetRecord {
        issue_id: fields[0].to_string(),
        issue_url: fields[1].to_string(),
        repo_id: fields[2].to_string(),
        true_links,
    })
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(parse_dataset(&text))
}

const ISSUE_COLUMNS: &[&str] = &["issue_id", "issue_key", "issue"];
const COMMIT_COLUMNS: &[&str] = &["commit_hash", "commit_id", "commit", "hash"];

/// Reads a per-project link table (a CSV with an issue column and a commit
/// column, one link per row, as in EALink's published data) and groups the
/// links by issue. `issue_url_template` gets `{issue_id}` substituted.
pub fn parse_link_table(csv_text: &str, repo_id: &str, issue_url_template: &str) -> Result<Dataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let headers = reader.headers()?.clone();
    let find = |names: &[&str], label: &'static str| {
        headers
            .iter()
            .position(|h| names.contains(&h.to_ascii_lowercase().as_str()))
            .ok_or(DatasetError::MissingColumn(label))
    };
    let issue_col = find(ISSUE_COLUMNS, "issue_id")?;
    let commit_col = find(COMMIT_COLUMNS, "commit_hash")?;

    let mut grouped: BTreeMap<String, Vec<CommitHash>> = BTreeMap::new();
    let mut skipped = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row?;
        let issue = row.get(issue_col).unwrap_or_default();
        match CommitHash::parse(row.get(commit_col).unwrap_or_default()) {
            Ok(hash) if !issue.is_empty() => {
                let links = grouped.entry(issue.to_string()).or_default();
                if !links.contains(&hash) {
                    links.push(hash);
                }
            }
            Ok(_) => skipped.push(SkippedLine {
                line,
                reason: "empty issue id".into(),
            }),
            Err(e) => skipped.push(SkippedLine {
                line,
                reason: e.to_string(),
            }),
        }
    }
    for s in &skipped {
        log::warn!("link table line {} skipped: {}", s.line, s.reason);
    }
    Ok(Dataset {
        records: grouped
            .into_iter()
            .map(|(issue_id, true_links)| DatasetRecord {
                issue_url: issue_url_template.replace("{issue_id}", &issue_id),
                issue_id,
                repo_id: repo_id.to_string(),
                true_links,
            })
            .collect(),
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub issue_id: String,
    pub issue_url: String,
    pub repo_id: String,
    pub true_links: Vec<CommitHash>,
    pub resolving_commit: CommitHash,
}

impl From<&GroundTruthRecord> for DatasetRecord {
    fn from(r: &GroundTruthRecord) -> Self {
        Self {
            issue_id: r.issue_id.clone(),
            issue_url: r.issue_url.clone(),
            repo_id: r.repo_id.clone(),
            true_links: r.true_links.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub issue_id: String,
    pub reason: String,
}

/// The latest link by `(commit_time, hash)`.
pub fn resolving_commit<'a>(links: impl IntoIterator<Item = (&'a CommitHash, Timestamp)>) -> Option<&'a CommitHash> {
    links
        .into_iter()
        .max_by(|(ha, ta), (hb, tb)| ta.cmp(tb).then_with(|| ha.cmp(hb)))
        .map(|(h, _)| h)
}

/// Attaches the resolving commit to every record. `commit_time` looks a
/// link up in its repository; a record with any unresolvable link is
/// excluded with a warning.
pub fn adjust_ground_truth(
    records: &[DatasetRecord],
    commit_time: impl Fn(&str, &CommitHash) -> Option<Timestamp>,
) -> (Vec<GroundTruthRecord>, Vec<Exclusion>) {
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for r in records {
        let timed: Result<Vec<_>, &CommitHash> = r
            .true_links
            .iter()
            .map(|h| commit_time(&r.repo_id, h).map(|t| (h, t)).ok_or(h))
            .collect();
        let chosen = match timed {
            Err(missing) => Err(format!("link {missing} not found in repository {}", r.repo_id)),
            Ok(timed) => resolving_commit(timed).cloned().ok_or_else(|| "no true links".to_string()),
        };
        match chosen {
            Ok(resolving_commit) => kept.push(GroundTruthRecord {
                issue_id: r.issue_id.clone(),
                issue_url: r.issue_url.clone(),
                repo_id: r.repo_id.clone(),
                true_links: r.true_links.clone(),
                resolving_commit,
            }),
            Err(reason) => {
                log::warn!("issue {} excluded: {reason}", r.issue_id);
                excluded.push(Exclusion {
                    issue_id: r.issue_id.clone(),
                    reason,
                });
            }
        }
    }
    (kept, excluded)
}

/// 1 if `truth` is among the first `k` entries of `ranked`, else 0.
pub fn hit_at_k<T: PartialEq>(ranked: &[T], truth: &T, k: usize) -> u32 {
    assert!(k >= 1, "k must be at least 1");
    ranked.iter().take(k).any(|c| c == truth) as u32
}

/// Mean of [`hit_at_k`] over a query set.
pub fn batch_hit_at_k<T: PartialEq>(queries: &[(Vec<T>, T)], k: usize) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    let hits: u32 = queries.iter().map(|(ranked, truth)| hit_at_k(ranked, truth, k)).sum();
    hits as f64 / queries.len() as f64
}

/// Hit@1 for single-answer sessions: correct finishes over all issues.
/// Sessions without a commit (gave up, exhausted, failed) are misses.
pub fn hit_at_1(answers: &[(Option<&CommitHash>, &CommitHash)]) -> f64 {
    if answers.is_empty() {
        return 0.0;
    }
    let correct = answers.iter().filter(|(got, truth)| *got == Some(*truth)).count();
    correct as f64 / answers.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::from_unix;

    fn h(c: char) -> CommitHash {
        CommitHash::parse(&c.to_string().repeat(40)).unwrap()
    }

    #[test]
    fn dataset_lines_and_skips() {
        let text = format!(
            "issue_id\tissue_url\trepo_id\ttrue_links\n# note\n\n\
             A-1\thttps://x/browse/A-1\trepo\t{};{}\n\
             A-2\thttps://x/browse/A-2\trepo\n\
             A-3\thttps://x/browse/A-3\trepo\tnothex\n\
             A-4\thttps://x/browse/A-4\trepo\t{}\n",
            h('a'),
            h('b'),
            h('c')
        );
        let d = parse_dataset(&text);
        assert_eq!(d.records.len(), 2);
        assert_eq!(d.records[0].true_links, vec![h('a'), h('b')]);
        assert_eq!(d.skipped.iter().map(|s| s.line).collect::<Vec<_>>(), vec![5, 6]);
    }

    #[test]
    fn link_table_groups_by_issue() {
        let csv = format!(
            "Issue_Key,commit_hash,extra\nB-2,{},x\nB-1,{},y\nB-2,{},z\nB-3,short,w\n",
            h('1'),
            h('2'),
            h('3')
        );
        let d = parse_link_table(&csv, "proj", "https://j/browse/{issue_id}").unwrap();
        assert_eq!(d.records.len(), 2);
        assert_eq!(d.records[0].issue_id, "B-1");
        assert_eq!(d.records[1].issue_url, "https://j/browse/B-2");
        assert_eq!(d.records[1].true_links, vec![h('1'), h('3')]);
        assert_eq!(d.skipped.len(), 1);
        assert!(matches!(
            parse_link_table("a,b\n", "p", ""),
            Err(DatasetError::MissingColumn("issue_id"))
        ));
    }

    #[test]
    fn adjustment_picks_latest_then_larger_hash() {
        let times = |_: &str, c: &CommitHash| match c.as_str().as_bytes()[0] {
            b'1' => Some(from_unix(10)),
            b'2' => Some(from_unix(30)),
            b'3' => Some(from_unix(30)),
            _ => None,
        };
        let rec = |id: &str, links: Vec<CommitHash>| DatasetRecord {
            issue_id: id.into(),
            issue_url: String::new(),
            repo_id: "r".into(),
            true_links: links,
        };
        let (kept, excluded) = adjust_ground_truth(
            &[
                rec("a", vec![h('1'), h('2')]),
                rec("b", vec![h('1')]),
                rec("c", vec![h('3'), h('2')]),
                rec("d", vec![h('1'), h('9')]),
            ],
            times,
        );
        let chosen: Vec<_> = kept.iter().map(|r| r.resolving_commit.clone()).collect();
        assert_eq!(chosen, vec![h('2'), h('1'), h('3')]);
        assert_eq!(excluded.len(), 1);
        assert_eq!(excluded[0].issue_id, "d");
    }

    #[test]
    fn hit_indicator() {
        let ranked: Vec<u32> = (1..=10).collect();
        assert_eq!(hit_at_k(&ranked, &1, 1), 1);
        assert_eq!(hit_at_k(&ranked, &7, 10), 1);
        assert_eq!(hit_at_k(&ranked, &7, 1), 0);
        assert_eq!(hit_at_k(&ranked, &42, 10), 0);
        assert_eq!(hit_at_k(&ranked, &1, 50), 1);
    }

    #[test]
    fn hit_at_1_counts_misses_over_all_issues() {
        let (a, b, c, d) = (h('a'), h('b'), h('c'), h('d'));
        let answers = [(Some(&a), &a), (Some(&b), &b), (Some(&c), &c), (None, &d)];
        assert_eq!(hit_at_1(&answers), 0.75);
    }
}
