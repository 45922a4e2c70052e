//! Follower outputs to label predictions, macro-F1, and per-instruction
//! evaluation with prompt-length accounting.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EvalSplit, LabeledExample};
use crate::gateway::{CompletionRequest, Gateway, GatewayError, LlmEndpoint, Phase, UsageTag};
use crate::prompting::{render_classification_query, Method, PromptArtifact, PromptError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot score an empty prediction set")]
    Empty,
    #[error("{preds} predictions for {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("label `{0}` is not in the label set")]
    UnknownLabel(String),
    #[error("no prediction for example `{0}`")]
    MissingPrediction(String),
    #[error("example {example_id}: {source}")]
    Gateway {
        example_id: String,
        #[source]
        source: GatewayError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Map a raw follower reply onto the label set; `None` is the INVALID sentinel.
///
/// Trim, strip surrounding quotes, strip a leading `Label:`, then match
/// case-insensitively (an exact-case match wins over other case variants).
pub fn normalize_prediction<S: AsRef<str>>(raw: &str, label_names: &[S]) -> Option<String> {
    let mut s = strip_quotes(raw.trim());
    if s.get(..6).is_some_and(|p| p.eq_ignore_ascii_case("label:")) {
        s = strip_quotes(s[6..].trim());
    }
    if let Some(exact) = label_names.iter().find(|l| l.as_ref() == s) {
        return Some(exact.as_ref().to_string());
    }
    let lower = s.to_lowercase();
    label_names
        .iter()
        .find(|l| l.as_ref().to_lowercase() == lower)
        .map(|l| l.as_ref().to_string())
}

fn strip_quotes(s: &str) -> &str {
    for q in ['"', '\'', '`'] {
        if s.len() >= 2 && s.starts_with(q) && s.ends_with(q) {
            return s[1..s.len() - 1].trim();
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub example_id: String,
    pub raw: String,
    /// `None` marks an INVALID prediction.
    pub matched_label: Option<String>,
}

impl Prediction {
    pub fn is_invalid(&self) -> bool {
        self.matched_label.is_none()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub true_positive: u64,
    pub false_positive: u64,
    pub false_negative: u64,
}

impl ClassCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.true_positive, self.true_positive + self.false_positive)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_positive, self.true_positive + self.false_negative)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-label TP/FP/FN. An INVALID prediction adds a false negative to the
/// gold class and no false positive anywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub label_names: Vec<String>,
    pub counts: Vec<ClassCounts>,
}

impl ConfusionTable {
    pub fn build<S: AsRef<str>>(preds: &[Option<&str>], golds: &[&str], label_names: &[S]) -> Result<Self> {
        if preds.len() != golds.len() {
            return Err(EvalError::LengthMismatch {
                preds: preds.len(),
                golds: golds.len(),
            });
        }
        if golds.is_empty() {
            return Err(EvalError::Empty);
        }
        let index: HashMap<&str, usize> = label_names.iter().enumerate().map(|(i, l)| (l.as_ref(), i)).collect();
        let lookup = |label: &str| {
            index
                .get(label)
                .copied()
                .ok_or_else(|| EvalError::UnknownLabel(label.to_string()))
        };
        let mut counts = vec![ClassCounts::default(); label_names.len()];
        for (pred, gold) in preds.iter().zip(golds) {
            let g = lookup(gold)?;
            match pred {
                Some(p) => {
                    let p = lookup(p)?;
                    if p == g {
                        counts[g].true_positive += 1;
                    } else {
                        counts[p].false_positive += 1;
                        counts[g].false_negative += 1;
                    }
                }
                None => counts[g].false_negative += 1,
            }
        }
        Ok(Self {
            label_names: label_names.iter().map(|l| l.as_ref().to_string()).collect(),
            counts,
        })
    }

    pub fn per_class_f1(&self) -> Vec<f64> {
        self.counts.iter().map(ClassCounts::f1).collect()
    }

    /// Unweighted mean of per-class F1 over every declared label.
    pub fn macro_f1(&self) -> f64 {
        let f1 = self.per_class_f1();
        f1.iter().sum::<f64>() / f1.len() as f64
    }
}

/// Macro-F1 over index-aligned predictions and gold labels.
pub fn macro_f1_aligned<S: AsRef<str>>(preds: &[Option<&str>], golds: &[&str], label_names: &[S]) -> Result<f64> {
    Ok(ConfusionTable::build(preds, golds, label_names)?.macro_f1())
}

/// Macro-F1 with predictions matched to gold examples by id.
pub fn macro_f1<S: AsRef<str>>(preds: &[Prediction], golds: &[LabeledExample], label_names: &[S]) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    let by_id: HashMap<&str, &Prediction> = preds.iter().map(|p| (p.example_id.as_str(), p)).collect();
    let mut aligned = Vec::with_capacity(golds.len());
    for gold in golds {
        let pred = by_id
            .get(gold.id.as_str())
            .ok_or_else(|| EvalError::MissingPrediction(gold.id.clone()))?;
        aligned.push(pred.matched_label.as_deref());
    }
    let gold_labels: Vec<&str> = golds.iter().map(|g| g.label.as_str()).collect();
    macro_f1_aligned(&aligned, &gold_labels, label_names)
}

/// Decoding settings for the follower during scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FollowerSettings {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub fail_fast: bool,
}

impl Default for FollowerSettings {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 64,
            fail_fast: true,
        }
    }
}

/// Follower answers for a batch of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRun {
    pub predictions: Vec<Prediction>,
    pub macro_f1: f64,
    /// 1.0 where the prediction equals the gold label.
    pub per_item: Vec<f64>,
    pub prompt_tokens: Vec<u64>,
    pub failed: usize,
    pub usage_approximate: bool,
}

impl ScoredRun {
    pub fn invalid_rate(&self) -> f64 {
        self.predictions.iter().filter(|p| p.is_invalid()).count() as f64 / self.predictions.len().max(1) as f64
    }

    pub fn accuracy(&self) -> f64 {
        self.per_item.iter().sum::<f64>() / self.per_item.len().max(1) as f64
    }
}

/// Send one query per example and score the replies.
///
/// Without fail-fast, a failed query is scored as INVALID and counted in `failed`.
pub fn score_queries<S: AsRef<str>>(
    gateway: &Gateway,
    follower: &LlmEndpoint,
    examples: &[LabeledExample],
    label_names: &[S],
    query: impl Fn(&LabeledExample) -> Result<String>,
    settings: FollowerSettings,
    tag: &UsageTag,
) -> Result<ScoredRun> {
    let prompts = examples.iter().map(query).collect::<Result<Vec<_>>>()?;
    let mut runs = score_prompt_groups(gateway, follower, examples, label_names, vec![prompts], settings, tag)?;
    Ok(runs.remove(0))
}

/// Score several instructions (each already carrying its format line) on
/// the same examples through one flat batch.
pub fn score_instructions<S: AsRef<str>, I: AsRef<str>>(
    gateway: &Gateway,
    follower: &LlmEndpoint,
    instructions: &[I],
    examples: &[LabeledExample],
    label_names: &[S],
    settings: FollowerSettings,
    tag: &UsageTag,
) -> Result<Vec<ScoredRun>> {
    let groups = instructions
        .iter()
        .map(|instr| {
            examples
                .iter()
                .map(|ex| render_classification_query(instr.as_ref(), &ex.text))
                .collect()
        })
        .collect();
    score_prompt_groups(gateway, follower, examples, label_names, groups, settings, tag)
}

/// Score an instruction that already carries its format line.
pub fn score_instruction<S: AsRef<str>>(
    gateway: &Gateway,
    follower: &LlmEndpoint,
    instruction: &str,
    examples: &[LabeledExample],
    label_names: &[S],
    settings: FollowerSettings,
    tag: &UsageTag,
) -> Result<ScoredRun> {
    let mut runs = score_instructions(gateway, follower, &[instruction], examples, label_names, settings, tag)?;
    Ok(runs.remove(0))
}

fn score_prompt_groups<S: AsRef<str>>(
    gateway: &Gateway,
    follower: &LlmEndpoint,
    examples: &[LabeledExample],
    label_names: &[S],
    groups: Vec<Vec<String>>,
    settings: FollowerSettings,
    tag: &UsageTag,
) -> Result<Vec<ScoredRun>> {
    if examples.is_empty() {
        return Err(EvalError::Empty);
    }
    let reqs: Vec<CompletionRequest> = groups
        .into_iter()
        .flatten()
        .map(|prompt| {
            CompletionRequest::new(follower.clone(), prompt)
                .temperature(settings.temperature)
                .top_p(settings.top_p)
                .max_tokens(settings.max_tokens)
                .tag(tag.clone())
        })
        .collect();
    let mut opts = gateway.batch_options();
    opts.fail_fast = settings.fail_fast;
    let mut results = gateway.complete_batch_with(&reqs, opts).into_iter();

    let group_count = reqs.len() / examples.len();
    let mut first_error = None;
    let mut runs = Vec::with_capacity(group_count);
    for _ in 0..group_count {
        let mut predictions = Vec::with_capacity(examples.len());
        let mut prompt_tokens = Vec::with_capacity(examples.len());
        let mut failed = 0;
        let mut approximate = false;
        for ex in examples {
            match results.next().expect("one result per request") {
                Ok(c) => {
                    approximate |= c.usage_approximate;
                    prompt_tokens.push(c.prompt_tokens);
                    predictions.push(Prediction {
                        example_id: ex.id.clone(),
                        matched_label: normalize_prediction(&c.text, label_names),
                        raw: c.text,
                    });
                }
                Err(err) => {
                    if settings.fail_fast {
                        if first_error.is_none() && !matches!(err, GatewayError::Aborted) {
                            first_error = Some(EvalError::Gateway {
                                example_id: ex.id.clone(),
                                source: err,
                            });
                        }
                        continue;
                    }
                    tracing::warn!(example = %ex.id, %err, "query failed; scored as invalid");
                    failed += 1;
                    predictions.push(Prediction {
                        example_id: ex.id.clone(),
                        raw: String::new(),
                        matched_label: None,
                    });
                }
            }
        }
        if first_error.is_some() {
            continue;
        }
        let per_item = examples
            .iter()
            .zip(&predictions)
            .map(|(ex, p)| f64::from(u8::from(p.matched_label.as_deref() == Some(ex.label.as_str()))))
            .collect();
        let macro_f1 = macro_f1(&predictions, examples, label_names)?;
        runs.push(ScoredRun {
            predictions,
            macro_f1,
            per_item,
            prompt_tokens,
            failed,
            usage_approximate: approximate,
        });
    }
    match first_error {
        Some(err) => Err(err),
        None => Ok(runs),
    }
}

/// One results-file row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    #[serde(default)]
    pub run_id: String,
    pub dataset: String,
    pub method: Method,
    /// Requested shot count (0 for naive).
    pub n: usize,
    #[serde(default)]
    pub effective_n: usize,
    pub macro_f1: f64,
    pub prompt_tokens: u64,
    #[serde(default)]
    pub tokens_approximate: bool,
    pub invalid_rate: f64,
    pub m: usize,
    pub seed: u64,
    #[serde(default)]
    pub failed_queries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub result: EvalResult,
    pub predictions: Vec<Prediction>,
}

/// Run an artifact over an evaluation split.
///
/// Instruction methods report the gateway-measured length of the shared
/// instruction prefix; ICL reports the mean assembled-prompt length.
pub fn evaluate_instruction(
    gateway: &Gateway,
    artifact: &PromptArtifact,
    split: &EvalSplit,
    follower: &LlmEndpoint,
    settings: FollowerSettings,
) -> Result<EvalOutcome> {
    let tag = UsageTag::new(artifact.method.as_str(), &artifact.dataset_name, Phase::Evaluate);
    let run = score_queries(
        gateway,
        follower,
        &split.examples,
        &artifact.label_names,
        |ex| Ok(artifact.query(&ex.text)?),
        settings,
        &tag,
    )?;
    let (prompt_tokens, approximate) = match artifact.method {
        Method::Icl => {
            let total: u64 = run.prompt_tokens.iter().sum();
            let count = run.prompt_tokens.len().max(1) as f64;
            ((total as f64 / count).round() as u64, run.usage_approximate)
        }
        _ => gateway
            .measure_prompt(follower, &artifact.instruction, tag.clone())
            .map_err(|source| EvalError::Gateway {
                example_id: "<instruction>".into(),
                source,
            })?,
    };
    let result = EvalResult {
        run_id: String::new(),
        dataset: artifact.dataset_name.clone(),
        method: artifact.method,
        n: artifact.requested_shot_count,
        effective_n: artifact.shot_count,
        macro_f1: run.macro_f1,
        prompt_tokens,
        tokens_approximate: approximate,
        invalid_rate: run.invalid_rate(),
        m: split.len(),
        seed: split.seed,
        failed_queries: run.failed,
    };
    Ok(EvalOutcome {
        result,
        predictions: run.predictions,
    })
}
