use std::collections::{BTreeMap, HashMap};

use git2::{Commit, Delta, DiffFindOptions, DiffOptions, Oid, Patch, Repository, Signature};

use super::GitError;
use crate::domain::{from_unix, Author, ChangeKind, CommitHash, CommitMeta, FileDiff, TimeWindow};

/// Every commit reachable from any ref, deduplicated and ordered by
/// (commit_time, hash).
#[derive(Debug, Clone, Default)]
pub struct UnifiedHistory {
    commits: Vec<CommitMeta>,
    index_by_hash: HashMap<CommitHash, usize>,
    index_by_author: BTreeMap<(String, String), Vec<usize>>,
}

impl UnifiedHistory {
    pub fn build(repo: &Repository) -> Result<Self, GitError> {
        let mut walk = repo.revwalk()?;
        let mut pushed = false;
        for reference in repo.references()? {
            let reference = reference?;
            // Tags may point at trees or blobs; those have no history.
            if let Ok(commit) = reference.peel_to_commit() {
                walk.push(commit.id())?;
                pushed = true;
            }
        }
        if let Ok(head) = repo.head() {
            if let Ok(commit) = head.peel_to_commit() {
                walk.push(commit.id())?;
                pushed = true;
            }
        }
        let mut commits = Vec::new();
        if pushed {
            for oid in walk {
                let commit = repo.find_commit(oid?)?;
                commits.push(commit_meta(&commit));
            }
        }
        Ok(Self::from_commits(commits))
    }

    pub fn from_commits(mut commits: Vec<CommitMeta>) -> Self {
        commits.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        commits.dedup_by(|a, b| a.hash == b.hash);
        let mut index_by_hash = HashMap::with_capacity(commits.len());
        let mut index_by_author: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        for (pos, c) in commits.iter().enumerate() {
            index_by_hash.insert(c.hash.clone(), pos);
            index_by_author.entry(c.author.git_key()).or_default().push(pos);
        }
        Self {
            commits,
            index_by_hash,
            index_by_author,
        }
    }

    pub fn commits(&self) -> &[CommitMeta] {
        &self.commits
    }

    pub fn len(&self) -> usize {
        self.commits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commits.is_empty()
    }

    pub fn position(&self, hash: &CommitHash) -> Option<usize> {
        self.index_by_hash.get(hash).copied()
    }

    pub fn get(&self, hash: &CommitHash) -> Option<&CommitMeta> {
        self.position(hash).map(|i| &self.commits[i])
    }

    pub fn contains(&self, hash: &CommitHash) -> bool {
        self.index_by_hash.contains_key(hash)
    }

    pub fn positions_of_author(&self, name: &str, email: &str) -> &[usize] {
        self.index_by_author
            .get(&(name.to_string(), email.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Positions whose commit_time lies inside `window`. Contiguous because
    /// the history is sorted by commit_time first.
    pub fn window_range(&self, window: &TimeWindow) -> std::ops::Range<usize> {
        let start = self.commits.partition_point(|c| c.commit_time < window.start);
        let end = self.commits.partition_point(|c| c.commit_time <= window.end);
        start..end.max(start)
    }
}

fn author_from(sig: &Signature<'_>) -> Author {
    Author::git(
        String::from_utf8_lossy(sig.name_bytes()).into_owned(),
        String::from_utf8_lossy(sig.email_bytes()).into_owned(),
    )
}

pub(crate) fn commit_meta(commit: &Commit<'_>) -> CommitMeta {
    let author = commit.author();
    let committer = commit.committer();
    CommitMeta {
        hash: CommitHash::parse(&commit.id().to_string()).expect("git oids are 40 hex chars"),
        author: author_from(&author),
        committer: author_from(&committer),
        message: String::from_utf8_lossy(commit.message_bytes()).into_owned(),
        author_time: from_unix(author.when().seconds()),
        commit_time: from_unix(committer.when().seconds()),
    }
}

/// Diff of `hash` against its first parent (the empty tree for roots).
/// Hunk texts are only produced when `with_hunks` is set.
pub(crate) fn diff_commit(
    repo: &Repository,
    hash: &CommitHash,
    with_hunks: bool,
) -> Result<Vec<FileDiff>, GitError> {
    let oid = Oid::from_str(hash.as_str())?;
    let commit = repo
        .find_commit(oid)
        .map_err(|_| GitError::CommitNotFound(hash.clone()))?;
    let tree = commit.tree()?;
    let parent_tree = if commit.parent_count() > 0 {
        Some(commit.parent(0)?.tree()?)
    } else {
        None
    };
    let mut opts = DiffOptions::new();
    opts.context_lines(3);
    let mut diff = repo.diff_tree_to_tree(parent_tree.as_ref(), Some(&tree), Some(&mut opts))?;
    let mut find = DiffFindOptions::new();
    find.renames(true);
    diff.find_similar(Some(&mut find))?;

    let mut files = Vec::new();
    for (idx, delta) in diff.deltas().enumerate() {
        let new_path = delta.new_file().path().map(|p| p.to_string_lossy().into_owned());
        let old_path = delta.old_file().path().map(|p| p.to_string_lossy().into_owned());
        let (change_kind, path, old) = match delta.status() {
            Delta::Added | Delta::Copied | Delta::Untracked => (ChangeKind::Added, new_path, None),
            Delta::Deleted => (ChangeKind::Deleted, old_path, None),
            Delta::Renamed => (ChangeKind::Renamed, new_path, old_path),
            _ => (ChangeKind::Modified, new_path, None),
        };
        let Some(path) = path else { continue };
        // The binary flag is only reliable once the patch has loaded content.
        let hunks = if !with_hunks {
            Vec::new()
        } else {
            match Patch::from_diff(&diff, idx)? {
                Some(patch) if patch.delta().flags().is_binary() => vec!["Binary files differ\n".to_string()],
                Some(patch) => patch_hunks(&patch)?,
                None if delta.flags().is_binary() => vec!["Binary files differ\n".to_string()],
                None => Vec::new(),
            }
        };
        files.push(FileDiff {
            path,
            old_path: old,
            change_kind,
            hunks,
        });
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(files)
}

fn patch_hunks(patch: &Patch<'_>) -> Result<Vec<String>, GitError> {
    let mut hunks = Vec::with_capacity(patch.num_hunks());
    for h in 0..patch.num_hunks() {
        let (hunk, line_count) = patch.hunk(h)?;
        let mut text = String::from_utf8_lossy(hunk.header()).into_owned();
        for l in 0..line_count {
            let line = patch.line_in_hunk(h, l)?;
            match line.origin() {
                c @ ('+' | '-' | ' ') => text.push(c),
                _ => {}
            }
            text.push_str(&String::from_utf8_lossy(line.content()));
        }
        hunks.push(text);
    }
    Ok(hunks)
}
