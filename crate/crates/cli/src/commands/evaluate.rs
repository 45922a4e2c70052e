use induct::corpus::{sample_eval_split, ShotSet};
use induct::evaluator::evaluate_instruction;
use induct::prompting::PromptArtifact;

use super::{config_error, load_store, Ctx, Outcome};
use crate::workspace::{read_jsonl, write_jsonl};

/// Score every artifact on `m` held-out examples of its dataset.
pub fn evaluate(ctx: &Ctx) -> anyhow::Result<Outcome> {
    let path = ctx.work.artifacts();
    if !path.exists() {
        return Err(config_error(format!(
            "{} does not exist; run induce first",
            path.display()
        )));
    }
    let artifacts: Vec<PromptArtifact> = read_jsonl(&path)?;
    let store = load_store(&ctx.work)?;
    let follower = ctx
        .config
        .endpoints
        .follower()
        .map_err(|e| config_error(e.to_string()))?;
    let gateway = ctx.gateway()?;
    let m = ctx.config.evaluate.m;

    let mut outcome = Outcome::default();
    let mut results = Vec::new();
    for artifact in &artifacts {
        let unit = format!(
            "{} {} n={}",
            artifact.dataset_name, artifact.method, artifact.requested_shot_count
        );
        let Some(ds) = store.get(&artifact.dataset_name) else {
            outcome.fail(&unit, "dataset missing from the store");
            continue;
        };
        let scored = (|| -> anyhow::Result<_> {
            let shots = ShotSet {
                dataset_name: ds.name.clone(),
                shot_count: artifact.requested_shot_count,
                shots: ds.select(&artifact.shot_ids)?,
                seed: artifact.seed,
                budget_exceeded: false,
            };
            let split = sample_eval_split(ds, m, ctx.config.seed, &shots)?;
            if split.shortfall > 0 {
                tracing::warn!(dataset = %ds.name, available = split.len(), requested = m, "evaluation split is short");
            }
            Ok(evaluate_instruction(
                gateway,
                artifact,
                &split,
                &follower,
                ctx.config.evaluate.follower,
            )?)
        })();
        match scored {
            Ok(mut out) => {
                out.result.run_id = ctx.run_id.clone();
                let file = ctx.work.predictions().join(format!(
                    "{}__{}__n{}.jsonl",
                    artifact.dataset_name, artifact.method, artifact.requested_shot_count
                ));
                write_jsonl(&file, &out.predictions)?;
                outcome.output(&ctx.work, &file);
                results.push(out.result);
            }
            Err(e) => outcome.fail(&unit, e),
        }
    }
    write_jsonl(&ctx.work.results(), &results)?;
    outcome.output(&ctx.work, &ctx.work.results());
    println!(
        "evaluated {} artifacts ({} failures)",
        results.len(),
        outcome.failures.len()
    );
    Ok(outcome)
}
