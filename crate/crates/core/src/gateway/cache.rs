//! Content-addressed on-disk completion cache.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::Completion;

#[derive(Debug, Clone)]
pub struct DiskCache {
    root: PathBuf,
}

impl DiskCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// `{digest[0..2]}/{digest}.response`
    pub fn path_for(&self, digest: &str) -> PathBuf {
        self.root.join(&digest[..2]).join(format!("{digest}.response"))
    }

    pub fn get(&self, digest: &str) -> Option<Completion> {
        let path = self.path_for(digest);
        let raw = fs::read(&path).ok()?;
        match serde_json::from_slice::<Completion>(&raw) {
            Ok(mut completion) => {
                completion.cached = true;
                Some(completion)
            }
            Err(err) => {
                tracing::warn!(path = %path.display(), %err, "ignoring unreadable cache entry");
                None
            }
        }
    }

    /// Write-temp-then-rename so concurrent readers never see partial entries.
    pub fn put(&self, digest: &str, completion: &Completion) -> std::io::Result<()> {
        let path = self.path_for(digest);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir)?;
        let mut stored = completion.clone();
        stored.cached = false;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&serde_json::to_vec(&stored)?)?;
        tmp.flush()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }
}
