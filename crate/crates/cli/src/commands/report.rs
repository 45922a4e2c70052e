use std::collections::{BTreeMap, BTreeSet};

use induct::evaluator::EvalResult;
use induct::prompting::Method;
use induct::stats::{
    aggregate_table, matched_compression, plot_points, render_compression_markdown, render_plot_csv, render_table_csv,
    render_table_markdown, significance_marker, wilcoxon_signed_rank, win_rate_matrix, PairedScores,
};

use super::{config_error, Ctx, Outcome};
use crate::workspace::{read_jsonl, write_atomic};

fn load_results(ctx: &Ctx) -> anyhow::Result<Vec<EvalResult>> {
    let path = ctx.work.results();
    if !path.exists() {
        return Err(config_error(format!(
            "{} does not exist; run evaluate first",
            path.display()
        )));
    }
    read_jsonl(&path)
}

/// Tables, plot data and compression ratios from the results file. Never
/// touches the network.
pub fn report(ctx: &Ctx) -> anyhow::Result<Outcome> {
    let results = load_results(ctx)?;
    let table = aggregate_table(&results)?;
    let compression = matched_compression(&table)?;
    let dir = ctx.work.report();
    let mut outcome = Outcome::default();
    let files = [
        ("table.md", render_table_markdown(&table)),
        ("table.csv", render_table_csv(&table)),
        ("plot.csv", render_plot_csv(&plot_points(&table))),
        ("compression.md", render_compression_markdown(&compression)),
    ];
    for (name, body) in files {
        let path = dir.join(name);
        write_atomic(&path, body.as_bytes())?;
        outcome.output(&ctx.work, &path);
    }
    print!("{}", render_table_markdown(&table));
    Ok(outcome)
}

/// Per-dataset F1 for every method at column `n`. Naive has no n and joins
/// every column.
fn column_scores(results: &[EvalResult], n: usize) -> Vec<(String, BTreeMap<String, f64>)> {
    let mut by_method: BTreeMap<Method, BTreeMap<String, f64>> = BTreeMap::new();
    for r in results {
        if r.method == Method::Naive || r.n == n {
            by_method
                .entry(r.method)
                .or_default()
                .insert(r.dataset.clone(), r.macro_f1);
        }
    }
    by_method.into_iter().map(|(m, s)| (m.to_string(), s)).collect()
}

/// Pairwise win rates and Wilcoxon tests between methods at each n.
pub fn compare(ctx: &Ctx) -> anyhow::Result<Outcome> {
    let results = load_results(ctx)?;
    let columns: BTreeSet<usize> = results
        .iter()
        .filter(|r| r.method != Method::Naive)
        .map(|r| r.n)
        .collect();
    let mut markdown = String::new();
    let mut csv = String::from("n,method_a,method_b,wins,losses,ties,datasets,statistic,p_value,marker\n");
    let mut outcome = Outcome::default();
    for n in columns {
        let scores = column_scores(&results, n);
        if scores.len() < 2 {
            continue;
        }
        let matrix = match win_rate_matrix(&scores) {
            Ok(m) => m,
            Err(e) => {
                outcome.fail(format!("n={n}"), e);
                continue;
            }
        };
        markdown.push_str(&format!(
            "## n={n}\n\nRow method strictly beats column method on this share of datasets.\n\n"
        ));
        markdown.push_str(&matrix.render_markdown());
        markdown.push('\n');
        for i in 0..scores.len() {
            for j in (i + 1)..scores.len() {
                let pairs = PairedScores::align(&scores[i].1, &scores[j].1)?;
                let test = wilcoxon_signed_rank(&pairs)?;
                let wins = matrix.wins[i][j];
                let losses = matrix.wins[j][i];
                csv.push_str(&format!(
                    "{n},{},{},{wins},{losses},{},{},{},{:.6},{}\n",
                    scores[i].0,
                    scores[j].0,
                    matrix.dataset_count - wins - losses,
                    matrix.dataset_count,
                    test.statistic,
                    test.p_value,
                    significance_marker(test.p_value)
                ));
            }
        }
    }
    let dir = ctx.work.report();
    for (name, body) in [("win_rates.md", markdown), ("pairwise.csv", csv)] {
        let path = dir.join(name);
        write_atomic(&path, body.as_bytes())?;
        outcome.output(&ctx.work, &path);
    }
    Ok(outcome)
}
