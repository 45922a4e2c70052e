//! Reflective evolutionary search over a Pareto front of instructions,
//! bounded by a budget of follower metric calls.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use regex::Regex;

use super::{
    ape::argmax_first, artifact, pareto_front, GepaConfig, Result, ScoredCandidate, SearchError, SearchOutcome,
    TraceRecord,
};
use crate::corpus::{LabeledExample, ShotSet};
use crate::evaluator::{score_instruction, FollowerSettings, ScoredRun};
use crate::gateway::{CompletionRequest, Gateway, LlmEndpoint, Phase, UsageTag};
use crate::prompting::{append_format_constraint, format_constraint_line, Method, NAIVE_INSTRUCTION};
use crate::seed::{derive_seed, rng_for};

const REFLECT_TEMPLATE: &str = include_str!("../../templates/reflect.txt");

/// Contents of the last fenced block, without an optional language tag.
pub(crate) fn extract_fenced(text: &str) -> Option<String> {
    let re = Regex::new(r"(?s)```[^\n`]*\n(.*?)```").expect("static regex");
    re.captures_iter(text)
        .last()
        .map(|c| c[1].trim().to_string())
        .filter(|s| !s.is_empty())
}

fn strip_constraint(text: &str, label_names: &[String]) -> String {
    let line = format_constraint_line(label_names);
    text.lines()
        .filter(|l| l.trim() != line)
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .to_string()
}

fn render_feedback(batch: &[LabeledExample], run: &ScoredRun) -> String {
    batch
        .iter()
        .zip(&run.predictions)
        .map(|(ex, p)| {
            let verdict = match p.matched_label.as_deref() {
                Some(l) if l == ex.label => "Correct.".to_string(),
                Some(_) => format!("Incorrect. The correct label is {}.", ex.label),
                None => format!("Invalid answer. The correct label is {}.", ex.label),
            };
            format!("Input: {}\nAnswer: {}\nFeedback: {verdict}", ex.text, p.raw.trim())
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

struct Member {
    text: String,
    parent: Option<usize>,
    scores: Vec<f64>,
}

impl Member {
    fn mean(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len().max(1) as f64
    }
}

#[allow(clippy::too_many_arguments)]
pub fn gepa_optimize(
    gateway: &Gateway,
    generator: &LlmEndpoint,
    follower: &LlmEndpoint,
    shots: &ShotSet,
    label_names: &[String],
    config: &GepaConfig,
    follower_settings: FollowerSettings,
) -> Result<SearchOutcome> {
    let n = shots.shots.len();
    if n < 2 {
        return Err(SearchError::TooFewShots {
            method: Method::Gepa,
            needed: 2,
            got: n,
        });
    }
    let dataset = shots.dataset_name.as_str();
    let budget = config.max_metric_calls;
    let mut warnings = Vec::new();
    let mut rng = rng_for(shots.seed, &["gepa", dataset]);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let parts = config.train_parts + config.val_parts;
    let train_len = ((n * config.train_parts) as f64 / parts as f64).round() as usize;
    let train_len = train_len.clamp(1, n - 1);
    let train: Vec<LabeledExample> = order[..train_len].iter().map(|&i| shots.shots[i].clone()).collect();
    let mut val: Vec<LabeledExample> = order[train_len..].iter().map(|&i| shots.shots[i].clone()).collect();
    if val.len() > budget {
        warnings.push(format!(
            "validation set truncated from {} to {budget} to fit the budget",
            val.len()
        ));
        val.truncate(budget);
    }

    let tag = UsageTag::new(Method::Gepa.as_str(), dataset, Phase::Induce);
    let score = |text: &str, examples: &[LabeledExample]| {
        score_instruction(
            gateway,
            follower,
            &append_format_constraint(text, label_names),
            examples,
            label_names,
            follower_settings,
            &tag,
        )
    };

    let seed_run = score(NAIVE_INSTRUCTION, &val)?;
    let mut calls = val.len();
    let mut pool = vec![Member {
        text: NAIVE_INSTRUCTION.to_string(),
        parent: None,
        scores: seed_run.per_item,
    }];
    let mut trace = Vec::new();
    let mut generator_calls = 0;
    let batch_size = config.minibatch_size.min(train.len());

    let mut iteration = 0;
    while calls + 2 * batch_size <= budget {
        let vectors: Vec<Vec<f64>> = pool.iter().map(|m| m.scores.clone()).collect();
        let front = pareto_front(&vectors);
        let parent_id = front[rng.random_range(0..front.len())];
        let batch: Vec<LabeledExample> = index::sample(&mut rng, train.len(), batch_size)
            .into_iter()
            .map(|i| train[i].clone())
            .collect();

        let parent_run = score(&pool[parent_id].text, &batch)?;
        calls += batch.len();
        let parent_score: f64 = parent_run.per_item.iter().sum();

        let prompt = REFLECT_TEMPLATE
            .replace("{instruction}", &pool[parent_id].text)
            .replace("{feedback}", &render_feedback(&batch, &parent_run));
        let req = CompletionRequest::new(generator.clone(), prompt)
            .temperature(config.temperature)
            .max_tokens(config.max_tokens)
            .seed(Some(derive_seed(
                shots.seed,
                &["gepa-reflect", dataset, &iteration.to_string()],
            )))
            .tag(tag.clone());
        let reply = gateway.complete(&req)?;
        generator_calls += 1;

        let mut record = TraceRecord::GepaIteration {
            iteration,
            parent_id,
            child_id: None,
            parent_minibatch_score: parent_score,
            minibatch_score: None,
            validation_mean: None,
            best_validation_mean: pool.iter().map(Member::mean).fold(f64::MIN, f64::max),
            calls_used: calls,
        };
        let child_text = extract_fenced(&reply.text)
            .map(|t| strip_constraint(&t, label_names))
            .filter(|t| !t.is_empty());
        match child_text {
            None => warnings.push(format!("iteration {iteration}: no instruction block in reflection")),
            Some(text) => {
                let child_run = score(&text, &batch)?;
                calls += batch.len();
                let child_score: f64 = child_run.per_item.iter().sum();
                let mut accepted_mean = None;
                let mut new_id = None;
                if child_score >= parent_score && calls + val.len() <= budget {
                    let full = score(&text, &val)?;
                    calls += val.len();
                    pool.push(Member {
                        text,
                        parent: Some(parent_id),
                        scores: full.per_item,
                    });
                    new_id = Some(pool.len() - 1);
                    accepted_mean = Some(pool[pool.len() - 1].mean());
                }
                if let TraceRecord::GepaIteration {
                    child_id,
                    minibatch_score,
                    validation_mean,
                    best_validation_mean,
                    calls_used,
                    ..
                } = &mut record
                {
                    *child_id = new_id;
                    *minibatch_score = Some(child_score);
                    *validation_mean = accepted_mean;
                    *best_validation_mean = pool.iter().map(Member::mean).fold(f64::MIN, f64::max);
                    *calls_used = calls;
                }
            }
        }
        trace.push(record);
        iteration += 1;
    }

    let means: Vec<f64> = pool.iter().map(Member::mean).collect();
    let best = argmax_first(&means).ok_or(SearchError::NoCandidates)?;
    let instruction = append_format_constraint(&pool[best].text, label_names);
    let candidates = pool
        .into_iter()
        .zip(means)
        .enumerate()
        .map(|(id, (m, score))| ScoredCandidate {
            id,
            instruction: m.text,
            score,
            parent_id: m.parent,
        })
        .collect();
    Ok(SearchOutcome {
        artifact: artifact(Method::Gepa, shots, label_names, instruction),
        candidates,
        trace,
        generator_calls,
        metric_calls: calls,
        eval_ids: val.iter().map(|e| e.id.clone()).collect(),
        warnings,
    })
}
