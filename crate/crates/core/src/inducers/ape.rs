//! Forward-generation search: propose many instructions from demonstration
//! subsamples, score each on held-out shots, keep the best.

use rand::seq::{index, SliceRandom};

use super::{artifact, clean_generated, ApeConfig, Result, ScoredCandidate, SearchError, SearchOutcome, TraceRecord};
use crate::corpus::{LabeledExample, ShotSet};
use crate::evaluator::{score_instructions, FollowerSettings};
use crate::gateway::{CompletionRequest, Gateway, LlmEndpoint, Phase, UsageTag};
use crate::prompting::{append_format_constraint, render_meta_prompt, Method, TemplateRegistry};
use crate::seed::{derive_seed, rng_for};

const FORWARD_TEMPLATE: &str = include_str!("../../templates/ape.txt");

fn render_forward(demos: &[LabeledExample]) -> String {
    let block = demos
        .iter()
        .map(|d| format!("Input: {}\nOutput: {}", d.text, d.label))
        .collect::<Vec<_>>()
        .join("\n\n");
    FORWARD_TEMPLATE.replace("{examples}", &block)
}

/// Index of the highest score; ties go to the lowest index.
pub(crate) fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.is_none_or(|b| *s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn ape_optimize(
    gateway: &Gateway,
    generator: &LlmEndpoint,
    follower: &LlmEndpoint,
    shots: &ShotSet,
    label_names: &[String],
    config: &ApeConfig,
    follower_settings: FollowerSettings,
) -> Result<SearchOutcome> {
    let n = shots.shots.len();
    if n < 2 {
        return Err(SearchError::TooFewShots {
            method: Method::Ape,
            needed: 2,
            got: n,
        });
    }
    let dataset = shots.dataset_name.as_str();
    let mut warnings = Vec::new();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(shots.seed, &["ape-split", dataset]));
    let (gen_idx, eval_idx) = order.split_at(n / 2);
    let gen_pool: Vec<&LabeledExample> = gen_idx.iter().map(|&i| &shots.shots[i]).collect();
    let mut eval_set: Vec<LabeledExample> = eval_idx.iter().map(|&i| shots.shots[i].clone()).collect();
    if eval_set.len() > config.eval_examples {
        eval_set.truncate(config.eval_examples);
    } else if eval_set.len() < config.eval_examples {
        warnings.push(format!(
            "evaluation half has {} shots; scoring on {} instead of {}",
            eval_set.len(),
            eval_set.len(),
            config.eval_examples
        ));
    }

    let template = match &config.meta_template {
        Some(id) => Some(TemplateRegistry::default().get(id)?.clone()),
        None => None,
    };
    let gen_tag = UsageTag::new(Method::Ape.as_str(), dataset, Phase::Induce);
    let mut requests = Vec::new();
    let mut origin = Vec::new();
    for sub in 0..config.subsample_count {
        let sub_key = sub.to_string();
        let mut rng = rng_for(shots.seed, &["ape-demos", dataset, &sub_key]);
        let take = config.demos_per_subsample.min(gen_pool.len());
        let demos: Vec<LabeledExample> = index::sample(&mut rng, gen_pool.len(), take)
            .into_iter()
            .map(|i| gen_pool[i].clone())
            .collect();
        let prompt = match &template {
            Some(t) => render_meta_prompt(t, label_names, &demos)?,
            None => render_forward(&demos),
        };
        for k in 0..config.prompts_per_subsample {
            let seed = derive_seed(shots.seed, &["ape-gen", dataset, &sub_key, &k.to_string()]);
            requests.push(
                CompletionRequest::new(generator.clone(), prompt.clone())
                    .temperature(config.temperature)
                    .max_tokens(config.max_tokens)
                    .seed(Some(seed))
                    .tag(gen_tag.clone()),
            );
            origin.push(sub);
        }
    }
    let generator_calls = requests.len();

    let mut proposals = Vec::new();
    for (result, sub) in gateway.complete_batch(&requests).into_iter().zip(origin) {
        match result {
            Ok(c) => {
                let text = clean_generated(&c.text);
                if text.is_empty() {
                    warnings.push(format!("subsample {sub}: empty proposal dropped"));
                } else {
                    proposals.push((sub, text));
                }
            }
            Err(err) => warnings.push(format!("subsample {sub}: generation failed: {err}")),
        }
    }
    if proposals.is_empty() {
        return Err(SearchError::NoCandidates);
    }

    let instructions: Vec<String> = proposals
        .iter()
        .map(|(_, text)| append_format_constraint(text, label_names))
        .collect();
    let eval_tag = UsageTag::new(Method::Ape.as_str(), dataset, Phase::Induce);
    let runs = score_instructions(
        gateway,
        follower,
        &instructions,
        &eval_set,
        label_names,
        follower_settings,
        &eval_tag,
    )?;
    let scores: Vec<f64> = runs.iter().map(|r| r.macro_f1).collect();
    let best = argmax_first(&scores).ok_or(SearchError::NoCandidates)?;

    let per_candidate = eval_set.len();
    let trace = proposals
        .iter()
        .zip(&scores)
        .enumerate()
        .map(|(i, ((sub, _), score))| TraceRecord::ApeCandidate {
            candidate: i,
            subsample: *sub,
            score: *score,
            calls_used: (i + 1) * per_candidate,
        })
        .collect();
    let candidates = proposals
        .into_iter()
        .zip(&scores)
        .enumerate()
        .map(|(id, ((_, instruction), score))| ScoredCandidate {
            id,
            instruction,
            score: *score,
            parent_id: None,
        })
        .collect();

    Ok(SearchOutcome {
        artifact: artifact(Method::Ape, shots, label_names, instructions[best].clone()),
        candidates,
        trace,
        generator_calls,
        metric_calls: instructions.len() * per_candidate,
        eval_ids: eval_set.iter().map(|e| e.id.clone()).collect(),
        warnings,
    })
}
