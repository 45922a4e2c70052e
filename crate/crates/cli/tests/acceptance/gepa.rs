use std::sync::Arc;

use induct::corpus::{LabeledExample, ShotSet};
use induct::evaluator::FollowerSettings;
use induct::gateway::wire::ChatResponse;
use induct::gateway::{Gateway, LlmEndpoint, Role, ScriptedTransport};
use induct::inducers::{dominates, gepa_optimize, pareto_front, GepaConfig, TraceRecord};
use induct::seed::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use crate::ensure;

/// Exhaustive pairwise check: `i` survives unless some `j` is >= everywhere
/// and > somewhere.
fn front_oracle(pool: &[Vec<f64>]) -> Vec<usize> {
    (0..pool.len())
        .filter(|&i| {
            !(0..pool.len()).any(|j| {
                j != i
                    && pool[j].iter().zip(&pool[i]).all(|(a, b)| a >= b)
                    && pool[j].iter().zip(&pool[i]).any(|(a, b)| a > b)
            })
        })
        .collect()
}

fn pareto_pools(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for pool_id in 0..200 {
        let candidates = rng.random_range(1..=10);
        let items = rng.random_range(1..=8);
        let levels = rng.random_range(2..=4);
        let pool: Vec<Vec<f64>> = (0..candidates)
            .map(|_| {
                (0..items)
                    .map(|_| rng.random_range(0..levels) as f64 / (levels - 1) as f64)
                    .collect()
            })
            .collect();
        let want = front_oracle(&pool);
        let got = pareto_front(&pool);
        ensure!(got == want, "pool {pool_id} {pool:?}: front {got:?}, oracle {want:?}");
        for &i in &got {
            ensure!(
                !pool.iter().any(|p| dominates(p, &pool[i])),
                "pool {pool_id}: front member {i} is dominated"
            );
        }
    }
    Ok(())
}

pub fn check() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6E9A);
    pareto_pools(&mut rng)?;

    let rule_re = Regex::new(r"rule-(\d+)").unwrap();
    let item_re = Regex::new(r"Input: item (\d+)\nLabel:$").unwrap();
    let mut max_calls = 0;
    let mut accepted = 0;
    for scenario in 0..60u64 {
        let shot_count = rng.random_range(2..=150);
        let labels: Vec<String> = vec!["yes".into(), "no".into(), "maybe".into()];
        let gold: Arc<Vec<usize>> = Arc::new((0..shot_count).map(|_| rng.random_range(0..3)).collect());
        let no_block_rate = rng.random_range(0.0..0.3);
        let shots = ShotSet {
            dataset_name: format!("scenario{scenario}"),
            shot_count,
            shots: (0..shot_count)
                .map(|i| LabeledExample::new(format!("x{i}"), format!("item {i}"), labels[gold[i]].clone()))
                .collect(),
            seed: scenario,
            budget_exceeded: false,
        };
        let config = GepaConfig {
            minibatch_size: rng.random_range(1..=5),
            ..GepaConfig::default()
        };
        let (g, l, r_re, i_re) = (gold.clone(), labels.clone(), rule_re.clone(), item_re.clone());
        let transport = ScriptedTransport::new(move |endpoint, req| {
            let prompt = req.prompt();
            let seed = req.seed.unwrap_or(0);
            let text = match endpoint.role {
                Role::Generator if (seed % 1000) as f64 / 1000.0 < no_block_rate => "I would rephrase it.".to_string(),
                Role::Generator => format!("Here it is:\n```\nApply rule-{}.\n```", seed % 997),
                Role::Follower => {
                    let rule: u64 = r_re.captures(prompt).map_or(0, |c| c[1].parse().unwrap());
                    let item: usize = i_re.captures(prompt).unwrap()[1].parse().unwrap();
                    let skill = rule % 10;
                    if derive_seed(rule, &[&item.to_string()]) % 10 < skill {
                        l[g[item]].clone()
                    } else {
                        l[(g[item] + 1) % 3].clone()
                    }
                }
            };
            Ok(ChatResponse::text(text, 1, 1))
        });
        let gateway = Gateway::new(Arc::new(transport));
        let generator = LlmEndpoint::new("http://mock", "reflector", Role::Generator);
        let follower = LlmEndpoint::new("http://mock", "follower", Role::Follower);
        let out = gepa_optimize(
            &gateway,
            &generator,
            &follower,
            &shots,
            &labels,
            &config,
            FollowerSettings::default(),
        )
        .map_err(|e| format!("scenario {scenario}: {e}"))?;

        let dataset = shots.dataset_name.clone();
        let metric = gateway
            .ledger()
            .sum_where(|k| k.dataset == dataset && k.role == Role::Follower)
            .calls() as usize;
        ensure!(metric <= 150, "scenario {scenario}: {metric} metric calls");
        ensure!(
            metric == out.metric_calls,
            "scenario {scenario}: ledger {metric} vs reported {}",
            out.metric_calls
        );
        max_calls = max_calls.max(metric);

        let mut previous = f64::MIN;
        for record in &out.trace {
            if let TraceRecord::GepaIteration {
                iteration,
                best_validation_mean,
                calls_used,
                ..
            } = record
            {
                ensure!(
                    *calls_used <= 150,
                    "scenario {scenario}: iteration {iteration} used {calls_used} calls"
                );
                ensure!(
                    *best_validation_mean >= previous,
                    "scenario {scenario}: best mean fell to {best_validation_mean} at iteration {iteration}"
                );
                previous = *best_validation_mean;
            }
        }
        let best = out.candidates.iter().map(|c| c.score).fold(f64::MIN, f64::max);
        ensure!(
            previous == f64::MIN || best == previous,
            "scenario {scenario}: final best {best} vs trace {previous}"
        );
        accepted += out.candidates.len() - 1;
    }
    Ok(format!(
        "200 pools match the oracle; 60 searches, peak {max_calls} metric calls, {accepted} accepted children"
    ))
}
