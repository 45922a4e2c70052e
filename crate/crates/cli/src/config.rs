//! The run configuration document and its digest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use induct::evaluator::FollowerSettings;
use induct::gateway::{LlmEndpoint, Role};
use induct::grpo::RolloutConfig;
use induct::inducers::{GeneratorSettings, SearchConfig};
use induct::prompting::Method;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub datasets: DatasetsConfig,
    pub induce: InduceConfig,
    pub evaluate: EvaluateConfig,
    pub search: SearchConfig,
    pub rollout: RolloutSection,
    pub endpoints: Endpoints,
    pub execution: Execution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetsConfig {
    /// Directory of `*.jsonl` inputs for ingest.
    pub input_dir: Option<PathBuf>,
    pub text_field: String,
    pub label_field: String,
    pub id_field: Option<String>,
    /// Ask the generator which fields hold text and label when no sidecar
    /// manifest exists.
    pub detect_columns: bool,
}

impl Default for DatasetsConfig {
    fn default() -> Self {
        Self {
            input_dir: None,
            text_field: "text".into(),
            label_field: "label".into(),
            id_field: None,
            detect_columns: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InduceConfig {
    pub methods: Vec<Method>,
    pub shot_counts: Vec<usize>,
    pub template: String,
    /// Extra meta-prompt templates by id.
    pub templates: BTreeMap<String, PathBuf>,
    pub context_budget: usize,
    pub generator: GeneratorSettings,
    /// Restrict to these dataset names; empty means every stored dataset.
    pub datasets: Vec<String>,
}

impl Default for InduceConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            shot_counts: vec![5, 10, 20, 50, 100],
            template: "meta1".into(),
            templates: BTreeMap::new(),
            context_budget: 32_768,
            generator: GeneratorSettings::default(),
            datasets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub m: usize,
    pub follower: FollowerSettings,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            m: 200,
            follower: FollowerSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutSection {
    #[serde(flatten)]
    pub config: RolloutConfig,
    pub groups_per_dataset: usize,
    /// Fixed shot count; when absent the mixed training plan assigns one per
    /// dataset.
    pub shot_count: Option<usize>,
    /// Defaults to `induce.template`.
    pub template: Option<String>,
}

impl Default for RolloutSection {
    fn default() -> Self {
        Self {
            config: RolloutConfig::default(),
            groups_per_dataset: 1,
            shot_count: None,
            template: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    pub generator: Option<EndpointConfig>,
    pub trained: Option<EndpointConfig>,
    pub follower: Option<EndpointConfig>,
}

impl Endpoints {
    fn resolve(&self, name: &str, cfg: &Option<EndpointConfig>, role: Role) -> anyhow::Result<LlmEndpoint> {
        let Some(cfg) = cfg else {
            bail!("endpoints.{name} is not configured");
        };
        let mut endpoint = LlmEndpoint::new(&cfg.base_url, &cfg.model, role);
        endpoint.auth_env = cfg.auth_env.clone();
        Ok(endpoint)
    }

    pub fn generator(&self) -> anyhow::Result<LlmEndpoint> {
        self.resolve("generator", &self.generator, Role::Generator)
    }

    pub fn trained(&self) -> anyhow::Result<LlmEndpoint> {
        self.resolve("trained", &self.trained, Role::Generator)
    }

    pub fn follower(&self) -> anyhow::Result<LlmEndpoint> {
        self.resolve("follower", &self.follower, Role::Follower)
    }
}

/// Knobs that change how a run executes but not what it computes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Execution {
    pub work_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub retry_base_delay_ms: u64,
    pub timeout_secs: u64,
}

impl Default for Execution {
    fn default() -> Self {
        Self {
            work_dir: PathBuf::from("work"),
            cache_dir: None,
            max_in_flight: 128,
            max_retries: 3,
            retry_base_delay_ms: 1000,
            timeout_secs: 120,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: Config = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.execution.max_in_flight == 0 {
            bail!("execution.max_in_flight must be positive");
        }
        if self.induce.shot_counts.contains(&0) {
            bail!("induce.shot_counts must be positive");
        }
        if self.induce.context_budget == 0 {
            bail!("induce.context_budget must be positive");
        }
        if self.evaluate.m == 0 {
            bail!("evaluate.m must be positive");
        }
        self.search.validate().map_err(anyhow::Error::msg)?;
        self.rollout.config.validate()?;
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.execution
            .cache_dir
            .clone()
            .unwrap_or_else(|| self.execution.work_dir.join("cache"))
    }

    /// SHA-256 over the canonical JSON of every field that affects results.
    /// Execution knobs and secret references are excluded.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("execution");
        }
        if let Some(endpoints) = value.get_mut("endpoints").and_then(|e| e.as_object_mut()) {
            for endpoint in endpoints.values_mut() {
                if let Some(e) = endpoint.as_object_mut() {
                    e.remove("auth_env");
                }
            }
        }
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }
}
