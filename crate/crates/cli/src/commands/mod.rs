//! One module per subcommand. Commands talk to each other only through
//! files in the work directory.

mod evaluate;
mod induce;
mod ingest;
mod report;
mod rollout;

use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use induct::corpus::ClassificationDataset;
use induct::gateway::{BatchOptions, DiskCache, Gateway, HttpTransport, RetryPolicy};

use crate::config::Config;
use crate::workspace::{endpoint_descriptors, run_id, RunManifest, WorkDir};

pub use evaluate::evaluate;
pub use induce::induce;
pub use ingest::ingest;
pub use report::{compare, report};
pub use rollout::rollout;

/// A problem with the configuration or the inputs it names; exits with 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(message: impl Into<String>) -> anyhow::Error {
    ConfigError(message.into()).into()
}

#[derive(Debug, Default)]
pub struct Outcome {
    /// Units of work that failed without aborting the command.
    pub failures: Vec<String>,
    pub outputs: Vec<String>,
}

impl Outcome {
    fn output(&mut self, work: &WorkDir, path: &Path) {
        let rel = path.strip_prefix(work.root()).unwrap_or(path);
        self.outputs.push(rel.display().to_string());
    }

    fn fail(&mut self, unit: impl fmt::Display, err: impl fmt::Display) {
        let message = format!("{unit}: {err:#}");
        tracing::error!("{message}");
        self.failures.push(message);
    }
}

pub struct Ctx {
    pub config: Config,
    pub work: WorkDir,
    pub command: &'static str,
    pub run_id: String,
    started_at: String,
    gateway: OnceCell<Gateway>,
}

impl Ctx {
    pub fn open(command: &'static str, config: Config) -> anyhow::Result<Self> {
        config.validate().map_err(|e| config_error(format!("{e:#}")))?;
        let work = WorkDir::open(&config.execution.work_dir)?;
        Ok(Self {
            run_id: run_id(command, &config),
            config,
            work,
            command,
            started_at: chrono::Utc::now().to_rfc3339(),
            gateway: OnceCell::new(),
        })
    }

    pub fn gateway(&self) -> anyhow::Result<&Gateway> {
        if let Some(gw) = self.gateway.get() {
            return Ok(gw);
        }
        let exec = &self.config.execution;
        let transport = HttpTransport::new(Duration::from_secs(exec.timeout_secs))?;
        let retry = RetryPolicy {
            max_retries: exec.max_retries,
            base_delay_ms: exec.retry_base_delay_ms,
            ..RetryPolicy::default()
        };
        let gateway = Gateway::new(Arc::new(transport))
            .with_cache(DiskCache::new(self.config.cache_dir()))
            .with_retry(retry)
            .with_batch_options(BatchOptions {
                max_in_flight: exec.max_in_flight,
                fail_fast: false,
            })
            .with_run_id(&self.run_id);
        Ok(self.gateway.get_or_init(|| gateway))
    }

    pub fn template_ids(&self) -> Vec<String> {
        let mut ids = vec![self.config.induce.template.clone()];
        if let Some(t) = &self.config.rollout.template {
            ids.push(t.clone());
        }
        ids.dedup();
        ids
    }

    /// Record the run. `result` is the command's own outcome.
    pub fn finish(self, result: &anyhow::Result<Outcome>) -> anyhow::Result<()> {
        let (status, failures, outputs) = match result {
            Ok(o) if o.failures.is_empty() => ("ok", o.failures.clone(), o.outputs.clone()),
            Ok(o) => ("partial", o.failures.clone(), o.outputs.clone()),
            Err(e) => ("failed", vec![format!("{e:#}")], Vec::new()),
        };
        let ledger = self.gateway.get().map(|g| g.ledger().snapshot()).unwrap_or_default();
        let manifest = RunManifest {
            run_id: self.run_id.clone(),
            command: self.command.to_string(),
            config_digest: self.config.digest(),
            endpoints: endpoint_descriptors(&self.config),
            template_ids: self.template_ids(),
            seed: self.config.seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: self.started_at.clone(),
            finished_at: chrono::Utc::now().to_rfc3339(),
            status: status.to_string(),
            failures,
            outputs,
            ledger,
        };
        manifest.write(&self.work)?;
        Ok(())
    }
}

/// Every dataset in the store, by name.
fn load_store(work: &WorkDir) -> anyhow::Result<BTreeMap<String, ClassificationDataset>> {
    let dir = work.store();
    if !dir.is_dir() {
        return Err(config_error(format!(
            "{} does not exist; run ingest first",
            dir.display()
        )));
    }
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(&dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            let raw = std::fs::read_to_string(&path)?;
            let ds: ClassificationDataset =
                serde_json::from_str(&raw).with_context(|| format!("reading {}", path.display()))?;
            out.insert(ds.name.clone(), ds);
        }
    }
    Ok(out)
}

/// Heuristic token count used for context budgets.
fn measure(text: &str) -> usize {
    induct::gateway::count_tokens_fallback(text) as usize
}
