use anyhow::anyhow;
use induct::corpus::{make_train_mix, sample_shots, ShotDirective};
use induct::grpo::{export_rollouts, rollout_group};
use induct::prompting::trim_meta_shots;
use induct::seed::derive_seed;

use super::induce::{registry, template};
use super::{config_error, load_store, measure, Ctx, Outcome};
use crate::workspace::write_jsonl;

/// Sample and score rollout groups for an external trainer.
pub fn rollout(ctx: &Ctx) -> anyhow::Result<Outcome> {
    let store = load_store(&ctx.work)?;
    let cfg = &ctx.config;
    let section = &cfg.rollout;
    let endpoints = &cfg.endpoints;
    let policy = if endpoints.trained.is_some() {
        endpoints.trained()
    } else {
        endpoints.generator()
    }
    .map_err(|e| config_error(e.to_string()))?;
    let follower = endpoints.follower().map_err(|e| config_error(e.to_string()))?;
    let template_id = section.template.as_ref().unwrap_or(&cfg.induce.template);
    let template = template(&registry(ctx)?, template_id)?;
    let gateway = ctx.gateway()?;

    let names: Vec<&String> = store.keys().collect();
    let plan: Vec<ShotDirective> = match section.shot_count {
        Some(n) => names
            .iter()
            .map(|name| ShotDirective {
                dataset_name: name.to_string(),
                shot_count: n,
                seed: derive_seed(cfg.seed, &["rollout-plan", name, &n.to_string()]),
            })
            .collect(),
        None => make_train_mix(&names, cfg.seed),
    };
    let mut outcome = Outcome::default();
    write_jsonl(&ctx.work.plan(), &plan)?;
    outcome.output(&ctx.work, &ctx.work.plan());

    let mut groups = Vec::new();
    for directive in &plan {
        let ds = &store[&directive.dataset_name];
        for g in 0..section.groups_per_dataset {
            let unit = format!("{} n={} group {g}", ds.name, directive.shot_count);
            let seed = derive_seed(directive.seed, &["group", &g.to_string()]);
            let built = (|| -> anyhow::Result<_> {
                if directive.shot_count >= ds.len() {
                    return Err(anyhow!(
                        "{} examples cannot hold {} shots plus a reward subset",
                        ds.len(),
                        directive.shot_count
                    ));
                }
                let shots = sample_shots(ds, directive.shot_count, seed)?;
                let budget = section.config.max_prompt_tokens as usize;
                let fitted = trim_meta_shots(&shots, &template, &ds.label_names, budget, measure)?;
                Ok(rollout_group(
                    gateway,
                    ds,
                    &fitted,
                    &template,
                    &policy,
                    &follower,
                    &section.config,
                    cfg.evaluate.follower,
                    seed,
                )?)
            })();
            match built {
                Ok(group) => groups.push(group),
                Err(e) => outcome.fail(&unit, e),
            }
        }
    }
    export_rollouts(&groups, &ctx.work.rollouts())?;
    outcome.output(&ctx.work, &ctx.work.rollouts());
    println!(
        "exported {} rollout groups ({} failures)",
        groups.len(),
        outcome.failures.len()
    );
    Ok(outcome)
}
