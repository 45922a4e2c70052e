use std::path::{Path, PathBuf};

use anyhow::Context;
use induct::corpus::{
    detect_columns, filter_dataset, load_dataset, load_with_manifest, read_records, ClassificationDataset,
    ColumnMapping, DatasetManifest,
};

use super::{config_error, Ctx, Outcome};
use crate::workspace::{write_atomic, write_jsonl};

fn input_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| config_error(format!("cannot read {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "jsonl") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(config_error(format!("no .jsonl datasets in {}", dir.display())));
    }
    Ok(files)
}

fn sidecar(path: &Path) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}.manifest.json"))
}

fn load_one(ctx: &Ctx, path: &Path) -> anyhow::Result<ClassificationDataset> {
    let manifest_path = sidecar(path);
    if manifest_path.exists() {
        return Ok(load_with_manifest(path, &DatasetManifest::read(&manifest_path)?)?);
    }
    let cfg = &ctx.config.datasets;
    let mapping = if cfg.detect_columns {
        let rows: Vec<_> = read_records(path)?.into_iter().take(5).map(|(_, r)| r).collect();
        detect_columns(&rows, ctx.gateway()?, &ctx.config.endpoints.generator()?)?
    } else {
        let mut m = ColumnMapping::new(&cfg.text_field, &cfg.label_field);
        m.id_field = cfg.id_field.clone();
        m
    };
    Ok(load_dataset(path, &mapping)?)
}

/// Load every input, keep datasets under the unique-label threshold, and
/// write the store plus a verdict per dataset.
pub fn ingest(ctx: &Ctx) -> anyhow::Result<Outcome> {
    let dir = ctx
        .config
        .datasets
        .input_dir
        .clone()
        .ok_or_else(|| config_error("datasets.input_dir is not set"))?;
    let files = input_files(&dir)?;
    let mut outcome = Outcome::default();
    let mut verdicts = Vec::new();
    let store = ctx.work.store();
    if store.exists() {
        std::fs::remove_dir_all(&store)?;
    }
    std::fs::create_dir_all(&store)?;

    for path in &files {
        let ds = match load_one(ctx, path) {
            Ok(ds) => ds,
            Err(e) => {
                outcome.fail(path.display(), e);
                continue;
            }
        };
        let verdict = filter_dataset(&ds);
        if verdict.keep {
            let out = store.join(format!("{}.json", ds.name));
            let body = serde_json::to_vec(&ds).context("serializing dataset")?;
            write_atomic(&out, &body)?;
            outcome.output(&ctx.work, &out);
        } else {
            tracing::info!(dataset = %ds.name, reason = %verdict.reason, "discarded");
        }
        verdicts.push(verdict);
    }
    write_jsonl(&ctx.work.filter_report(), &verdicts)?;
    outcome.output(&ctx.work, &ctx.work.filter_report());
    let kept = verdicts.iter().filter(|v| v.keep).count();
    println!(
        "ingested {} datasets: {kept} kept, {} discarded",
        verdicts.len(),
        verdicts.len() - kept
    );
    Ok(outcome)
}
