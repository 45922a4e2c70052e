use anyhow::anyhow;
use induct::corpus::{sample_shots, ClassificationDataset};
use induct::inducers::{ape_optimize, gepa_optimize, icl_inducer, mii_single_pass, naive_inducer, SearchOutcome};
use induct::prompting::{trim_meta_shots, MetaPromptTemplate, Method, PromptArtifact, TemplateRegistry};
use serde_json::json;

use super::{config_error, load_store, measure, Ctx, Outcome};
use crate::workspace::{write_atomic, write_jsonl};

pub(super) fn registry(ctx: &Ctx) -> anyhow::Result<TemplateRegistry> {
    let mut registry = TemplateRegistry::default();
    for (id, path) in &ctx.config.induce.templates {
        registry
            .register_file(id, path)
            .map_err(|e| config_error(format!("template {id}: {e}")))?;
    }
    Ok(registry)
}

pub(super) fn template(registry: &TemplateRegistry, id: &str) -> anyhow::Result<MetaPromptTemplate> {
    registry.get(id).cloned().map_err(|e| config_error(e.to_string()))
}

fn write_trace(ctx: &Ctx, unit: &str, search: &SearchOutcome) -> anyhow::Result<std::path::PathBuf> {
    let path = ctx.work.traces().join(format!("{unit}.json"));
    let doc = json!({
        "candidates": search.candidates,
        "trace": search.trace,
        "generator_calls": search.generator_calls,
        "metric_calls": search.metric_calls,
        "eval_ids": search.eval_ids,
        "warnings": search.warnings,
    });
    write_atomic(&path, serde_json::to_string_pretty(&doc)?.as_bytes())?;
    Ok(path)
}

fn induce_one(
    ctx: &Ctx,
    ds: &ClassificationDataset,
    method: Method,
    n: usize,
    template: &MetaPromptTemplate,
    outcome: &mut Outcome,
) -> anyhow::Result<PromptArtifact> {
    let cfg = &ctx.config;
    let seed = cfg.seed;
    if method == Method::Naive {
        return Ok(naive_inducer(&ds.name, &ds.label_names, seed));
    }
    if n >= ds.len() {
        return Err(anyhow!(
            "{} examples cannot hold {n} shots plus an evaluation remainder",
            ds.len()
        ));
    }
    let shots = sample_shots(ds, n, seed)?;
    let budget = cfg.induce.context_budget;
    let gateway = ctx.gateway()?;
    let unit = format!("{}__{}__n{n}", ds.name, method);
    match method {
        Method::Naive => unreachable!("handled above"),
        Method::Icl => Ok(icl_inducer(&ds.label_names, &shots, budget, measure)?),
        Method::MiiZero | Method::MiiTrained => {
            let endpoint = if method == Method::MiiZero {
                cfg.endpoints.generator()
            } else {
                cfg.endpoints.trained()
            }
            .map_err(|e| config_error(e.to_string()))?;
            let fitted = trim_meta_shots(&shots, template, &ds.label_names, budget, measure)?;
            let mut artifact = mii_single_pass(
                gateway,
                &endpoint,
                method,
                template,
                &fitted,
                &ds.label_names,
                cfg.induce.generator,
            )?;
            artifact.requested_shot_count = n;
            Ok(artifact)
        }
        Method::Ape | Method::Gepa => {
            let generator = cfg.endpoints.generator().map_err(|e| config_error(e.to_string()))?;
            let follower = cfg.endpoints.follower().map_err(|e| config_error(e.to_string()))?;
            let search = if method == Method::Ape {
                ape_optimize(
                    gateway,
                    &generator,
                    &follower,
                    &shots,
                    &ds.label_names,
                    &cfg.search.ape,
                    cfg.evaluate.follower,
                )?
            } else {
                gepa_optimize(
                    gateway,
                    &generator,
                    &follower,
                    &shots,
                    &ds.label_names,
                    &cfg.search.gepa,
                    cfg.evaluate.follower,
                )?
            };
            let path = write_trace(ctx, &unit, &search)?;
            outcome.output(&ctx.work, &path);
            Ok(search.artifact)
        }
    }
}

/// One artifact per (dataset, method, n); naive once per dataset.
pub fn induce(ctx: &Ctx) -> anyhow::Result<Outcome> {
    let store = load_store(&ctx.work)?;
    let cfg = &ctx.config.induce;
    let names: Vec<&String> = if cfg.datasets.is_empty() {
        store.keys().collect()
    } else {
        for name in &cfg.datasets {
            if !store.contains_key(name) {
                return Err(config_error(format!("dataset {name} is not in the store")));
            }
        }
        cfg.datasets.iter().collect()
    };
    let registry = registry(ctx)?;
    let template = template(&registry, &cfg.template)?;

    let mut outcome = Outcome::default();
    let mut artifacts = Vec::new();
    for name in names {
        let ds = &store[name];
        for &method in &cfg.methods {
            let shot_counts: &[usize] = if method == Method::Naive {
                &[0]
            } else {
                &cfg.shot_counts
            };
            for &n in shot_counts {
                match induce_one(ctx, ds, method, n, &template, &mut outcome) {
                    Ok(mut artifact) => {
                        artifact.run_id = Some(ctx.run_id.clone());
                        artifacts.push(artifact);
                    }
                    Err(e) if e.downcast_ref::<super::ConfigError>().is_some() => return Err(e),
                    Err(e) => outcome.fail(format!("{name} {method} n={n}"), e),
                }
            }
        }
    }
    write_jsonl(&ctx.work.artifacts(), &artifacts)?;
    outcome.output(&ctx.work, &ctx.work.artifacts());
    println!(
        "induced {} artifacts ({} failures)",
        artifacts.len(),
        outcome.failures.len()
    );
    Ok(outcome)
}
