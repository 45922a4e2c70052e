//! Policy-optimization math over groups of sampled instructions, and the
//! rollout driver that writes trainer-ready records.
//!
//! Ratios are sequence-level and there is no KL term. Only objective values
//! and per-sample coefficients are computed here; gradients belong to the
//! trainer that consumes the export.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{sample_eval_split, ClassificationDataset, CorpusError, ShotSet};
use crate::evaluator::{score_instructions, EvalError, FollowerSettings};
use crate::gateway::{count_tokens_fallback, CompletionRequest, Gateway, GatewayError, LlmEndpoint, Phase, UsageTag};
use crate::prompting::{append_format_constraint, render_meta_prompt, MetaPromptTemplate, PromptError};
use crate::seed::derive_seed;

pub const ROLLOUT_SCHEMA: &str = "induct.rollouts";
pub const ROLLOUT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("group size must be at least 2, got {0}")]
    GroupTooSmall(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite input")]
    NonFinite,
    #[error("invalid rollout config: {0}")]
    InvalidConfig(String),
    #[error("meta-prompt is {tokens} tokens, over the {budget}-token prompt budget; reduce the shot count")]
    PromptTooLong { tokens: u64, budget: u64 },
    #[error("rollout file: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub type Result<T, E = GrpoError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub group_size: usize,
    pub reward_subset_m: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_response_tokens: u32,
    pub max_prompt_tokens: u64,
    pub clip_low: f64,
    pub clip_high: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            group_size: 5,
            reward_subset_m: 20,
            temperature: 1.0,
            top_p: 1.0,
            max_response_tokens: 1024,
            max_prompt_tokens: 4096,
            clip_low: 0.2,
            clip_high: 0.4,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(GrpoError::GroupTooSmall(self.group_size));
        }
        if self.reward_subset_m == 0 {
            return Err(GrpoError::InvalidConfig("reward_subset_m must be positive".into()));
        }
        if !(self.clip_low > 0.0 && self.clip_high > 0.0) {
            return Err(GrpoError::InvalidConfig("clip bounds must be positive".into()));
        }
        Ok(())
    }
}

/// `R_k - mean(R)`.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(GrpoError::NonFinite);
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(rewards.iter().map(|r| r - mean).collect())
}

pub fn importance_ratio(logp_new: f64, logp_old: f64) -> Result<f64> {
    if !logp_new.is_finite() || !logp_old.is_finite() {
        return Err(GrpoError::NonFinite);
    }
    Ok((logp_new - logp_old).exp())
}

fn check_lengths(ratios: &[f64], advantages: &[f64]) -> Result<()> {
    if ratios.len() != advantages.len() {
        return Err(GrpoError::LengthMismatch(ratios.len(), advantages.len()));
    }
    if ratios.is_empty() {
        return Err(GrpoError::GroupTooSmall(0));
    }
    Ok(())
}

fn clipped_term(ratio: f64, advantage: f64, clip_low: f64, clip_high: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip_low, 1.0 + clip_high) * advantage;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

/// `(1/G) Σ min(r_k A_k, clip(r_k, 1-lo, 1+hi) A_k)`.
pub fn clipped_objective(ratios: &[f64], advantages: &[f64], clip_low: f64, clip_high: f64) -> Result<f64> {
    check_lengths(ratios, advantages)?;
    let total: f64 = ratios
        .iter()
        .zip(advantages)
        .map(|(&r, &a)| clipped_term(r, a, clip_low, clip_high).0)
        .sum();
    Ok(total / ratios.len() as f64)
}

/// `(1/G) Σ r_k A_k`.
pub fn unclipped_surrogate(ratios: &[f64], advantages: &[f64]) -> Result<f64> {
    check_lengths(ratios, advantages)?;
    let total: f64 = ratios.iter().zip(advantages).map(|(r, a)| r * a).sum();
    Ok(total / ratios.len() as f64)
}

/// Partial derivative of the clipped objective with respect to each
/// `logp_new_k`: `(1/G) A_k r_k` where the unclipped branch is the minimum,
/// zero where the clipped constant is.
pub fn objective_logprob_gradient(
    ratios: &[f64],
    advantages: &[f64],
    clip_low: f64,
    clip_high: f64,
) -> Result<Vec<f64>> {
    check_lengths(ratios, advantages)?;
    let g = ratios.len() as f64;
    Ok(ratios
        .iter()
        .zip(advantages)
        .map(|(&r, &a)| match clipped_term(r, a, clip_low, clip_high) {
            (_, true) => r * a / g,
            (_, false) => 0.0,
        })
        .collect())
}

/// Macro-F1 of the follower on `subset` under the instruction plus its
/// format line.
pub fn reward(
    gateway: &Gateway,
    instruction: &str,
    subset: &crate::corpus::EvalSplit,
    label_names: &[String],
    follower: &LlmEndpoint,
    settings: FollowerSettings,
) -> Result<f64> {
    let tag = UsageTag::new("rollout", &subset.dataset_name, Phase::Rollout);
    let full = append_format_constraint(instruction, label_names);
    let runs = score_instructions(
        gateway,
        follower,
        &[full],
        &subset.examples,
        label_names,
        settings,
        &tag,
    )?;
    Ok(runs[0].macro_f1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub dataset: String,
    pub meta_prompt: String,
    pub instructions: Vec<String>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub logprobs_new: Option<Vec<f64>>,
    pub logprobs_old: Option<Vec<f64>>,
    pub reward_ids: Vec<String>,
    pub config: RolloutConfig,
    pub seed: u64,
}

/// Sample G instructions from one meta-prompt and score each on a fresh
/// reward subset drawn from outside the shot set.
#[allow(clippy::too_many_arguments)]
pub fn rollout_group(
    gateway: &Gateway,
    dataset: &ClassificationDataset,
    shots: &ShotSet,
    template: &MetaPromptTemplate,
    generator: &LlmEndpoint,
    follower: &LlmEndpoint,
    config: &RolloutConfig,
    follower_settings: FollowerSettings,
    seed: u64,
) -> Result<RolloutGroup> {
    config.validate()?;
    let meta_prompt = render_meta_prompt(template, &dataset.label_names, &shots.shots)?;
    let tokens = count_tokens_fallback(&meta_prompt);
    if tokens > config.max_prompt_tokens {
        return Err(GrpoError::PromptTooLong {
            tokens,
            budget: config.max_prompt_tokens,
        });
    }

    let tag = UsageTag::new("rollout", &dataset.name, Phase::Rollout);
    let requests: Vec<CompletionRequest> = (0..config.group_size)
        .map(|k| {
            CompletionRequest::new(generator.clone(), meta_prompt.clone())
                .temperature(config.temperature)
                .top_p(config.top_p)
                .max_tokens(config.max_response_tokens)
                .seed(Some(derive_seed(seed, &["rollout", &dataset.name, &k.to_string()])))
                .logprobs(true)
                .tag(tag.clone())
        })
        .collect();
    let completions = gateway
        .complete_batch(&requests)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let instructions: Vec<String> = completions.iter().map(|c| c.text.trim().to_string()).collect();
    let logprobs_old = completions.iter().map(|c| c.logprob).collect::<Option<Vec<f64>>>();

    let subset = sample_eval_split(
        dataset,
        config.reward_subset_m,
        derive_seed(seed, &["reward-subset"]),
        shots,
    )?;
    let full: Vec<String> = instructions
        .iter()
        .map(|i| append_format_constraint(i, &dataset.label_names))
        .collect();
    let runs = score_instructions(
        gateway,
        follower,
        &full,
        &subset.examples,
        &dataset.label_names,
        follower_settings,
        &tag,
    )?;
    let rewards: Vec<f64> = runs.iter().map(|r| r.macro_f1).collect();
    let advantages = group_advantages(&rewards)?;

    Ok(RolloutGroup {
        dataset: dataset.name.clone(),
        meta_prompt,
        instructions,
        rewards,
        advantages,
        logprobs_new: None,
        logprobs_old,
        reward_ids: subset.examples.iter().map(|e| e.id.clone()).collect(),
        config: *config,
        seed,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
    groups: usize,
}

/// One header line, then one group per line.
pub fn export_rollouts(groups: &[RolloutGroup], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = Header {
        schema: ROLLOUT_SCHEMA.into(),
        version: ROLLOUT_SCHEMA_VERSION,
        groups: groups.len(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for group in groups {
        serde_json::to_writer(&mut out, group)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn import_rollouts(path: &Path) -> Result<Vec<RolloutGroup>> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header: Header = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => return Err(GrpoError::Schema("missing header".into())),
    };
    if header.schema != ROLLOUT_SCHEMA || header.version != ROLLOUT_SCHEMA_VERSION {
        return Err(GrpoError::Schema(format!(
            "unsupported schema {} v{}",
            header.schema, header.version
        )));
    }
    let groups = lines
        .map(|line| Ok(serde_json::from_str(&line?)?))
        .collect::<Result<Vec<RolloutGroup>>>()?;
    if groups.len() != header.groups {
        return Err(GrpoError::Schema(format!(
            "header declares {} groups, found {}",
            header.groups,
            groups.len()
        )));
    }
    Ok(groups)
}
