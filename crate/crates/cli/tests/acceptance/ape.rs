use std::collections::HashMap;
use std::sync::Arc;

use induct::corpus::{LabeledExample, ShotSet};
use induct::evaluator::FollowerSettings;
use induct::gateway::{Gateway, LlmEndpoint, Role, ScriptedTransport};
use induct::inducers::{ape_optimize, ApeConfig};
use induct::prompting::format_constraint_line;
use induct::seed::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use crate::ensure;

/// Per-candidate correctness patterns over shot indices. Candidates map to a
/// pattern by their generation seed, so several candidates share a pattern
/// and tie.
struct ScoreTable {
    labels: Vec<String>,
    gold: Vec<usize>,
    patterns: Vec<Vec<u8>>,
}

/// 0 answers correctly, 1 answers a wrong label, 2 answers garbage.
fn table(rng: &mut ChaCha8Rng, shots: usize) -> ScoreTable {
    let k = rng.random_range(2..=4);
    let labels: Vec<String> = (0..k).map(|i| format!("class{i}")).collect();
    let gold = (0..shots).map(|_| rng.random_range(0..k)).collect();
    let patterns = (0..rng.random_range(1..=8))
        .map(|_| {
            let p_right = rng.random_range(0.2..0.95);
            (0..shots)
                .map(|_| match rng.random_range(0.0..1.0) {
                    x if x < p_right => 0,
                    x if x < p_right + (1.0 - p_right) * 0.7 => 1,
                    _ => 2,
                })
                .collect()
        })
        .collect();
    ScoreTable { labels, gold, patterns }
}

impl ScoreTable {
    fn answer(&self, pattern: usize, item: usize) -> String {
        let gold = self.gold[item];
        match self.patterns[pattern][item] {
            0 => self.labels[gold].clone(),
            1 => self.labels[(gold + 1) % self.labels.len()].clone(),
            _ => "no idea".into(),
        }
    }

    /// Macro-F1 from first principles over the items in `eval`.
    fn oracle_score(&self, pattern: usize, eval: &[usize]) -> f64 {
        let k = self.labels.len();
        let mut tp = vec![0.0; k];
        let mut fp = vec![0.0; k];
        let mut fn_ = vec![0.0; k];
        for &item in eval {
            let gold = self.gold[item];
            match self.patterns[pattern][item] {
                0 => tp[gold] += 1.0,
                1 => {
                    fn_[gold] += 1.0;
                    fp[(gold + 1) % k] += 1.0;
                }
                _ => fn_[gold] += 1.0,
            }
        }
        (0..k)
            .map(|l| {
                let d = 2.0 * tp[l] + fp[l] + fn_[l];
                if d == 0.0 {
                    0.0
                } else {
                    2.0 * tp[l] / d
                }
            })
            .sum::<f64>()
            / k as f64
    }
}

pub fn check() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA9E);
    let candidate_re = Regex::new(r"candidate-(\d+)").unwrap();
    let item_re = Regex::new(r"Input: item (\d+)\nLabel:$").unwrap();
    let config = ApeConfig::default();
    let mut ties = 0;
    for t in 0..100u64 {
        let shot_count = 40;
        let scores = Arc::new(table(&mut rng, shot_count));
        let shots = ShotSet {
            dataset_name: format!("table{t}"),
            shot_count,
            shots: (0..shot_count)
                .map(|i| {
                    LabeledExample::new(
                        format!("x{i}"),
                        format!("item {i}"),
                        scores.labels[scores.gold[i]].clone(),
                    )
                })
                .collect(),
            seed: derive_seed(t, &["ape-acceptance"]),
            budget_exceeded: false,
        };
        let pattern_count = scores.patterns.len() as u64;
        let (s, c_re, i_re) = (scores.clone(), candidate_re.clone(), item_re.clone());
        let transport = ScriptedTransport::new(move |endpoint, req| {
            let prompt = req.prompt();
            let text = match endpoint.role {
                Role::Generator => format!("Follow candidate-{}.", req.seed.unwrap_or(0)),
                Role::Follower => {
                    let seed: u64 = c_re.captures(prompt).unwrap()[1].parse().unwrap();
                    let item: usize = i_re.captures(prompt).unwrap()[1].parse().unwrap();
                    s.answer((seed % pattern_count) as usize, item)
                }
            };
            Ok(induct::gateway::wire::ChatResponse::text(text, 1, 1))
        });
        let gateway = Gateway::new(Arc::new(transport));
        let generator = LlmEndpoint::new("http://mock", "gen", Role::Generator);
        let follower = LlmEndpoint::new("http://mock", "follow", Role::Follower);
        let out = ape_optimize(
            &gateway,
            &generator,
            &follower,
            &shots,
            &scores.labels,
            &config,
            FollowerSettings::default(),
        )
        .map_err(|e| format!("table {t}: {e}"))?;

        let dataset = shots.dataset_name.clone();
        let ledger = gateway.ledger();
        let gen_calls = ledger
            .sum_where(|k| k.dataset == dataset && k.role == Role::Generator)
            .calls();
        let eval_calls = ledger
            .sum_where(|k| k.dataset == dataset && k.role == Role::Follower)
            .calls();
        ensure!(
            gen_calls == 90 && eval_calls == 1800,
            "table {t}: ledger {gen_calls} generation / {eval_calls} evaluation calls"
        );

        let id_to_index: HashMap<&str, usize> = shots
            .shots
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect();
        let eval: Vec<usize> = out.eval_ids.iter().map(|id| id_to_index[id.as_str()]).collect();
        let oracle: Vec<f64> = out
            .candidates
            .iter()
            .map(|c| {
                let seed: u64 = candidate_re.captures(&c.instruction).unwrap()[1].parse().unwrap();
                scores.oracle_score((seed % pattern_count) as usize, &eval)
            })
            .collect();
        for (c, want) in out.candidates.iter().zip(&oracle) {
            ensure!(
                (c.score - want).abs() <= 1e-12,
                "table {t}: candidate {} scored {} vs oracle {want}",
                c.id,
                c.score
            );
        }
        let best = oracle.iter().copied().fold(f64::MIN, f64::max);
        let expected = oracle.iter().position(|s| *s == best).unwrap();
        ties += usize::from(oracle.iter().filter(|s| **s == best).count() > 1);
        let chosen = format!(
            "{}\n{}",
            out.candidates[expected].instruction,
            format_constraint_line(&scores.labels)
        );
        ensure!(
            out.artifact.instruction == chosen,
            "table {t}: selected {:?}, expected candidate {expected}",
            out.artifact.instruction
        );
    }
    Ok(format!(
        "100 tables, 90 + 1800 calls each, {ties} tables with tied maxima"
    ))
}
