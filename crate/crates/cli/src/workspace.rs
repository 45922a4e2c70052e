//! Work-directory layout, the per-directory lock, line-delimited JSON I/O
//! and run manifests.

use std::fs::{File, TryLockError};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use induct::gateway::LedgerEntry;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{Config, EndpointConfig};

pub struct WorkDir {
    root: PathBuf,
    _lock: File,
}

impl WorkDir {
    /// Create the directory if needed and take its exclusive lock.
    pub fn open(root: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let lock = File::create(root.join(".lock"))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => return Err(anyhow!("{} is in use by another command", root.display())),
            Err(TryLockError::Error(e)) => return Err(e.into()),
        }
        Ok(Self {
            root: root.to_path_buf(),
            _lock: lock,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn store(&self) -> PathBuf {
        self.root.join("store")
    }

    pub fn filter_report(&self) -> PathBuf {
        self.root.join("filter_report.jsonl")
    }

    pub fn artifacts(&self) -> PathBuf {
        self.root.join("artifacts.jsonl")
    }

    pub fn traces(&self) -> PathBuf {
        self.root.join("traces")
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results.jsonl")
    }

    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn rollouts(&self) -> PathBuf {
        self.root.join("rollouts.jsonl")
    }

    pub fn plan(&self) -> PathBuf {
        self.root.join("plan.jsonl")
    }

    pub fn manifests(&self) -> PathBuf {
        self.root.join("manifests")
    }
}

/// Write through a sibling temporary file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn to_jsonl<T: Serialize>(rows: &[T]) -> anyhow::Result<Vec<u8>> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    write_atomic(path, &to_jsonl(rows)?)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointDescriptor {
    pub role: String,
    pub base_url: String,
    pub model: String,
    /// Name of the secret's environment variable, never its value.
    pub auth_env: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub config_digest: String,
    pub endpoints: Vec<EndpointDescriptor>,
    pub template_ids: Vec<String>,
    pub seed: u64,
    pub code_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub status: String,
    pub failures: Vec<String>,
    pub outputs: Vec<String>,
    pub ledger: Vec<LedgerEntry>,
}

pub fn run_id(command: &str, config: &Config) -> String {
    format!("{command}-{}", &config.digest()[..16])
}

pub fn endpoint_descriptors(config: &Config) -> Vec<EndpointDescriptor> {
    let e = &config.endpoints;
    [
        ("generator", &e.generator),
        ("trained", &e.trained),
        ("follower", &e.follower),
    ]
    .into_iter()
    .filter_map(|(role, cfg): (&str, &Option<EndpointConfig>)| {
        cfg.as_ref().map(|c| EndpointDescriptor {
            role: role.to_string(),
            base_url: c.base_url.clone(),
            model: c.model.clone(),
            auth_env: c.auth_env.clone(),
        })
    })
    .collect()
}

impl RunManifest {
    pub fn write(&self, work: &WorkDir) -> anyhow::Result<PathBuf> {
        let path = work.manifests().join(format!("{}.json", self.run_id));
        write_atomic(&path, serde_json::to_string_pretty(self)?.as_bytes())?;
        Ok(path)
    }
}
