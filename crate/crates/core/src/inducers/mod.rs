//! Producers of [`PromptArtifact`]s: the naive and ICL baselines,
//! single-pass induction through a generator model, and the APE and GEPA
//! search baselines.

mod ape;
mod gepa;
pub mod pareto;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ape::ape_optimize;
pub use gepa::gepa_optimize;
pub use pareto::{dominates, pareto_front};

use crate::corpus::ShotSet;
use crate::evaluator::EvalError;
use crate::gateway::{count_tokens_fallback, CompletionRequest, Gateway, GatewayError, LlmEndpoint, Phase, UsageTag};
use crate::prompting::{
    append_format_constraint, render_icl, render_meta_prompt, render_naive, trim_icl_shots, MetaPromptTemplate, Method,
    PromptArtifact, PromptError, TokenSource,
};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("{method} needs at least {needed} shots, got {got}")]
    TooFewShots { method: Method, needed: usize, got: usize },
    #[error("generator produced no usable candidates")]
    NoCandidates,
    #[error("generator returned an empty instruction")]
    EmptyGeneration,
    #[error("{0} is not a single-pass induction method")]
    NotSinglePass(Method),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

pub type Result<T, E = SearchError> = std::result::Result<T, E>;

/// Decoding for instruction generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSettings {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApeConfig {
    pub subsample_count: usize,
    pub prompts_per_subsample: usize,
    pub eval_examples: usize,
    /// Demonstrations shown per generation prompt.
    pub demos_per_subsample: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Generate with a meta-prompt template instead of the forward template.
    pub meta_template: Option<String>,
}

impl Default for ApeConfig {
    fn default() -> Self {
        Self {
            subsample_count: 3,
            prompts_per_subsample: 30,
            eval_examples: 20,
            demos_per_subsample: 5,
            temperature: 0.9,
            max_tokens: 256,
            meta_template: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GepaConfig {
    /// Relative size of the train part in the train:validation split.
    pub train_parts: usize,
    pub val_parts: usize,
    /// One metric call is one follower evaluation of one example.
    pub max_metric_calls: usize,
    pub minibatch_size: usize,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GepaConfig {
    fn default() -> Self {
        Self {
            train_parts: 1,
            val_parts: 2,
            max_metric_calls: 150,
            minibatch_size: 3,
            temperature: 1.0,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub ape: ApeConfig,
    pub gepa: GepaConfig,
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), String> {
        let counts = [
            ("ape.subsample_count", self.ape.subsample_count),
            ("ape.prompts_per_subsample", self.ape.prompts_per_subsample),
            ("ape.eval_examples", self.ape.eval_examples),
            ("ape.demos_per_subsample", self.ape.demos_per_subsample),
            ("gepa.train_parts", self.gepa.train_parts),
            ("gepa.val_parts", self.gepa.val_parts),
            ("gepa.max_metric_calls", self.gepa.max_metric_calls),
            ("gepa.minibatch_size", self.gepa.minibatch_size),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

/// Audit record for one search step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    ApeCandidate {
        candidate: usize,
        subsample: usize,
        score: f64,
        calls_used: usize,
    },
    GepaIteration {
        iteration: usize,
        parent_id: usize,
        child_id: Option<usize>,
        parent_minibatch_score: f64,
        minibatch_score: Option<f64>,
        validation_mean: Option<f64>,
        best_validation_mean: f64,
        calls_used: usize,
    },
}

/// A scored instruction considered during search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub id: usize,
    /// Instruction text without the format line.
    pub instruction: String,
    pub score: f64,
    pub parent_id: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub artifact: PromptArtifact,
    pub candidates: Vec<ScoredCandidate>,
    pub trace: Vec<TraceRecord>,
    pub generator_calls: usize,
    pub metric_calls: usize,
    /// Shot ids used for scoring candidates.
    pub eval_ids: Vec<String>,
    pub warnings: Vec<String>,
}

pub(crate) fn clean_generated(text: &str) -> String {
    let t = text.trim();
    let t = t.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(t);
    t.trim().to_string()
}

/// Single-pass induction: one generator completion of the rendered
/// meta-prompt, followed by the format line.
#[allow(clippy::too_many_arguments)]
pub fn mii_single_pass(
    gateway: &Gateway,
    generator: &LlmEndpoint,
    method: Method,
    template: &MetaPromptTemplate,
    shots: &ShotSet,
    label_names: &[String],
    settings: GeneratorSettings,
) -> Result<PromptArtifact> {
    if !matches!(method, Method::MiiZero | Method::MiiTrained) {
        return Err(SearchError::NotSinglePass(method));
    }
    let prompt = render_meta_prompt(template, label_names, &shots.shots)?;
    let req = CompletionRequest::new(generator.clone(), prompt)
        .temperature(settings.temperature)
        .top_p(settings.top_p)
        .max_tokens(settings.max_tokens)
        .seed(Some(derive_seed(shots.seed, &["mii", &shots.dataset_name])))
        .tag(UsageTag::new(method.as_str(), &shots.dataset_name, Phase::Induce));
    let text = clean_generated(&gateway.complete(&req)?.text);
    if text.is_empty() {
        return Err(SearchError::EmptyGeneration);
    }
    let instruction = append_format_constraint(&text, label_names);
    Ok(artifact(method, shots, label_names, instruction))
}

pub(crate) fn artifact(method: Method, shots: &ShotSet, label_names: &[String], instruction: String) -> PromptArtifact {
    PromptArtifact {
        method,
        dataset_name: shots.dataset_name.clone(),
        label_names: label_names.to_vec(),
        token_length: count_tokens_fallback(&instruction),
        token_source: TokenSource::Heuristic,
        instruction,
        shot_count: shots.effective_count(),
        requested_shot_count: shots.shot_count,
        shot_ids: shots.ids(),
        shots: Vec::new(),
        seed: shots.seed,
        run_id: None,
    }
}

pub fn naive_inducer(dataset_name: &str, label_names: &[String], seed: u64) -> PromptArtifact {
    let instruction = render_naive(label_names);
    PromptArtifact {
        method: Method::Naive,
        dataset_name: dataset_name.to_string(),
        label_names: label_names.to_vec(),
        token_length: count_tokens_fallback(&instruction),
        token_source: TokenSource::Heuristic,
        instruction,
        shot_count: 0,
        requested_shot_count: 0,
        shot_ids: Vec::new(),
        shots: Vec::new(),
        seed,
        run_id: None,
    }
}

/// ICL assembly directive: the naive header plus the shots that fit `budget`
/// under `measure`.
pub fn icl_inducer<M: Fn(&str) -> usize>(
    label_names: &[String],
    shots: &ShotSet,
    budget: usize,
    measure: M,
) -> Result<PromptArtifact> {
    let trimmed = trim_icl_shots(shots, label_names, budget, &measure)?;
    if trimmed.shots.is_empty() {
        return Err(SearchError::TooFewShots {
            method: Method::Icl,
            needed: 1,
            got: 0,
        });
    }
    let assembled = render_icl(label_names, &trimmed.shots, "")?;
    let mut out = artifact(Method::Icl, &trimmed, label_names, render_naive(label_names));
    out.token_length = measure(&assembled) as u64;
    out.shots = trimmed.shots;
    Ok(out)
}
