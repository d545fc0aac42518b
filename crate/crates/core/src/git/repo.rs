use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Mutex, MutexGuard};

use git2::Repository;
use sha2::{Digest, Sha256};

use super::GitError;

/// A repository opened once per session. libgit2 handles are not `Sync`,
/// so access goes through a mutex.
pub struct RepoHandle {
    path: PathBuf,
    repo: Mutex<Repository>,
}

impl std::fmt::Debug for RepoHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RepoHandle").field("path", &self.path).finish()
    }
}

impl RepoHandle {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, GitError> {
        let path = path.as_ref();
        let repo = Repository::open(path)
            .map_err(|e| GitError::RepoUnavailable(format!("{}: {}", path.display(), e.message())))?;
        Ok(Self {
            path: path.to_path_buf(),
            repo: Mutex::new(repo),
        })
    }

    /// Opens a local clone, or mirrors a clone URL into `cache_dir` first.
    /// The mirror directory name is derived from a hash of the URL, and an
    /// existing mirror is reused as-is.
    pub fn open_source(source: &str, cache_dir: &Path) -> Result<Self, GitError> {
        let local = Path::new(source);
        if local.exists() {
            return Self::open(local);
        }
        if !looks_like_url(source) {
            return Err(GitError::RepoUnavailable(format!("no such path: {source}")));
        }
        let dest = mirror_path(source, cache_dir);
        if !dest.exists() {
            std::fs::create_dir_all(cache_dir)
                .map_err(|e| GitError::Clone(format!("{}: {e}", cache_dir.display())))?;
            log::info!("cloning {source} into {}", dest.display());
            let status = Command::new("git")
                .args(["clone", "--mirror", "--quiet", source])
                .arg(&dest)
                .status()
                .map_err(|e| GitError::Clone(format!("could not run git: {e}")))?;
            if !status.success() {
                return Err(GitError::Clone(format!("git clone {source} exited with {status}")));
            }
        }
        Self::open(&dest)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn lock(&self) -> MutexGuard<'_, Repository> {
        // A poisoned lock only means another reader panicked; the handle is read-only.
        self.repo.lock().unwrap_or_else(|p| p.into_inner())
    }
}

fn looks_like_url(source: &str) -> bool {
    source.contains("://") || source.starts_with("git@")
}

pub fn mirror_path(url: &str, cache_dir: &Path) -> PathBuf {
    let digest = Sha256::digest(url.as_bytes());
    let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    cache_dir.join(format!("{hex}.git"))
}
