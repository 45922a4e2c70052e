use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{significance_marker, wilcoxon_signed_rank, PairedScores, StatsError};
use crate::evaluator::EvalResult;
use crate::prompting::Method;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub mean_f1: f64,
    pub mean_tokens: f64,
    pub datasets: usize,
    /// Wilcoxon p against ICL at the same n; only on trained-induction cells.
    pub p_value: Option<f64>,
    pub marker: String,
    #[serde(skip)]
    pub f1_by_dataset: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: Method,
    /// One entry per column; `None` where the method has no results at that n.
    pub cells: Vec<Option<TableCell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub columns: Vec<usize>,
    pub rows: Vec<TableRow>,
    pub datasets: Vec<String>,
}

impl ReportTable {
    pub fn cell(&self, method: Method, n: usize) -> Option<&TableCell> {
        let col = self.columns.iter().position(|c| *c == n)?;
        self.rows.iter().find(|r| r.method == method)?.cells[col].as_ref()
    }
}

fn cell_from(scores: &BTreeMap<String, (f64, u64)>) -> TableCell {
    let count = scores.len() as f64;
    TableCell {
        mean_f1: scores.values().map(|(f, _)| f).sum::<f64>() / count,
        mean_tokens: scores.values().map(|(_, t)| *t as f64).sum::<f64>() / count,
        datasets: scores.len(),
        p_value: None,
        marker: String::new(),
        f1_by_dataset: scores.iter().map(|(d, (f, _))| (d.clone(), *f)).collect(),
    }
}

/// Method × n grid of unweighted dataset means. Naive has no n and fills
/// every column. Every populated cell must cover the same datasets.
pub fn aggregate_table(results: &[EvalResult]) -> Result<ReportTable, StatsError> {
    if results.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut cells: BTreeMap<(Method, usize), BTreeMap<String, (f64, u64)>> = BTreeMap::new();
    for r in results {
        let n = if r.method == Method::Naive { 0 } else { r.n };
        let slot = cells.entry((r.method, n)).or_default();
        if slot.insert(r.dataset.clone(), (r.macro_f1, r.prompt_tokens)).is_some() {
            return Err(StatsError::Duplicate(format!("{} n={n} on {}", r.method, r.dataset)));
        }
    }
    let datasets: BTreeSet<&String> = cells.values().flat_map(|c| c.keys()).collect();
    let mut ragged = Vec::new();
    for ((method, n), scores) in &cells {
        let missing: Vec<&str> = datasets
            .iter()
            .filter(|d| !scores.contains_key(**d))
            .map(|d| d.as_str())
            .collect();
        if !missing.is_empty() {
            ragged.push(format!("{method} n={n} lacks {}", missing.join(", ")));
        }
    }
    if !ragged.is_empty() {
        return Err(StatsError::Ragged(ragged.join("; ")));
    }

    let mut columns: Vec<usize> = cells
        .keys()
        .filter(|(m, _)| *m != Method::Naive)
        .map(|(_, n)| *n)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if columns.is_empty() {
        columns.push(0);
    }

    let mut rows = Vec::new();
    for method in Method::ALL {
        if !cells.keys().any(|(m, _)| *m == method) {
            continue;
        }
        let row_cells = columns
            .iter()
            .map(|&n| {
                let key = if method == Method::Naive { 0 } else { n };
                cells.get(&(method, key)).map(cell_from)
            })
            .collect();
        rows.push(TableRow {
            method,
            cells: row_cells,
        });
    }

    let mut table = ReportTable {
        columns,
        rows,
        datasets: datasets.into_iter().cloned().collect(),
    };
    for col in 0..table.columns.len() {
        let icl = table
            .rows
            .iter()
            .find(|r| r.method == Method::Icl)
            .and_then(|r| r.cells[col].clone());
        let Some(icl) = icl else { continue };
        if let Some(row) = table.rows.iter_mut().find(|r| r.method == Method::MiiTrained) {
            if let Some(cell) = row.cells[col].as_mut() {
                let pairs = PairedScores::align(&cell.f1_by_dataset, &icl.f1_by_dataset)?;
                let p = wilcoxon_signed_rank(&pairs)?.p_value;
                cell.p_value = Some(p);
                cell.marker = significance_marker(p).to_string();
            }
        }
    }
    Ok(table)
}

fn markdown(headers: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count().max(3)).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(headers);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&line(&rule));
    for row in rows {
        out.push_str(&line(row));
    }
    out
}

fn fmt_f1(cell: &TableCell) -> String {
    format!("{:.3}{}", cell.mean_f1, cell.marker)
}

fn fmt_tokens(value: f64) -> String {
    format!("{value:.1}")
}

/// Two aligned blocks per method: mean macro-F1 with its marker, then mean
/// prompt tokens.
pub fn render_table_markdown(table: &ReportTable) -> String {
    let mut headers = vec!["method".to_string(), "metric".to_string()];
    headers.extend(table.columns.iter().map(|n| format!("n={n}")));
    let mut rows = Vec::new();
    for row in &table.rows {
        let mut f1 = vec![row.method.to_string(), "macro_f1".to_string()];
        let mut tokens = vec![String::new(), "tokens".to_string()];
        for cell in &row.cells {
            match cell {
                Some(c) => {
                    f1.push(fmt_f1(c));
                    tokens.push(fmt_tokens(c.mean_tokens));
                }
                None => {
                    f1.push("-".into());
                    tokens.push("-".into());
                }
            }
        }
        rows.push(f1);
        rows.push(tokens);
    }
    let mut out = markdown(&headers, &rows);
    out.push_str(&format!(
        "\nMeans over {} datasets. Markers: trained induction vs ICL at equal n, two-sided Wilcoxon signed-rank \
         (zero differences dropped; * p<0.05, ** p<0.01, *** p<0.001).\n",
        table.datasets.len()
    ));
    out
}

/// One line per populated grid cell, with the same rounding as the markdown.
pub fn render_table_csv(table: &ReportTable) -> String {
    let mut out = String::from("method,n,mean_f1,mean_tokens,datasets,p_value,marker\n");
    for row in &table.rows {
        for (n, cell) in table.columns.iter().zip(&row.cells) {
            let Some(c) = cell else { continue };
            let p = c.p_value.map(|p| format!("{p:.6}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{n},{:.3},{},{},{p},{}\n",
                row.method,
                c.mean_f1,
                fmt_tokens(c.mean_tokens),
                c.datasets,
                c.marker
            ));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionRow {
    pub induced: Method,
    pub induced_n: usize,
    pub baseline: Method,
    pub baseline_n: usize,
    pub induced_tokens: f64,
    pub baseline_tokens: f64,
    /// `baseline_tokens / induced_tokens`.
    pub ratio: f64,
    /// `induced F1 - baseline F1`.
    pub delta_f1: f64,
    pub p_value: f64,
}

/// Token-reduction ratios for the given (induced, baseline) cell pairs.
/// A table cell address: method and shot-count column.
pub type CellKey = (Method, usize);

pub fn compression_summary(
    table: &ReportTable,
    pairs: &[(CellKey, CellKey)],
) -> Result<Vec<CompressionRow>, StatsError> {
    pairs
        .iter()
        .map(|&((im, in_), (bm, bn))| {
            let a = table
                .cell(im, in_)
                .ok_or_else(|| StatsError::Missing(vec![format!("{im} n={in_}")]))?;
            let b = table
                .cell(bm, bn)
                .ok_or_else(|| StatsError::Missing(vec![format!("{bm} n={bn}")]))?;
            let pairs = PairedScores::align(&a.f1_by_dataset, &b.f1_by_dataset)?;
            Ok(CompressionRow {
                induced: im,
                induced_n: in_,
                baseline: bm,
                baseline_n: bn,
                induced_tokens: a.mean_tokens,
                baseline_tokens: b.mean_tokens,
                ratio: b.mean_tokens / a.mean_tokens,
                delta_f1: a.mean_f1 - b.mean_f1,
                p_value: wilcoxon_signed_rank(&pairs)?.p_value,
            })
        })
        .collect()
}

/// For every trained-induction column, the ICL column with the closest mean
/// F1 (ties to the smaller n).
pub fn matched_compression(table: &ReportTable) -> Result<Vec<CompressionRow>, StatsError> {
    let Some(icl) = table.rows.iter().find(|r| r.method == Method::Icl) else {
        return Ok(Vec::new());
    };
    let Some(mii) = table.rows.iter().find(|r| r.method == Method::MiiTrained) else {
        return Ok(Vec::new());
    };
    let mut pairs = Vec::new();
    for (col, cell) in mii.cells.iter().enumerate() {
        let Some(cell) = cell else { continue };
        let best = icl
            .cells
            .iter()
            .enumerate()
            .filter_map(|(j, c)| c.as_ref().map(|c| (j, (c.mean_f1 - cell.mean_f1).abs())))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((j, _)) = best {
            pairs.push((
                (Method::MiiTrained, table.columns[col]),
                (Method::Icl, table.columns[j]),
            ));
        }
    }
    compression_summary(table, &pairs)
}

pub fn render_compression_markdown(rows: &[CompressionRow]) -> String {
    let headers: Vec<String> = [
        "induced",
        "baseline",
        "induced_tokens",
        "baseline_tokens",
        "reduction",
        "delta_f1",
        "p_value",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format!("{} n={}", r.induced, r.induced_n),
                format!("{} n={}", r.baseline, r.baseline_n),
                fmt_tokens(r.induced_tokens),
                fmt_tokens(r.baseline_tokens),
                format!("{:.1}x", r.ratio),
                format!("{:+.3}", r.delta_f1),
                format!("{:.4}", r.p_value),
            ]
        })
        .collect();
    markdown(&headers, &body)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub method: Method,
    pub n: usize,
    pub mean_tokens: f64,
    pub mean_f1: f64,
}

/// One point per distinct (method, n) cell; naive appears once at n = 0.
pub fn plot_points(table: &ReportTable) -> Vec<PlotPoint> {
    let mut points = Vec::new();
    for row in &table.rows {
        for (n, cell) in table.columns.iter().zip(&row.cells) {
            let Some(c) = cell else { continue };
            let n = if row.method == Method::Naive { 0 } else { *n };
            if row.method == Method::Naive && points.iter().any(|p: &PlotPoint| p.method == Method::Naive) {
                continue;
            }
            points.push(PlotPoint {
                method: row.method,
                n,
                mean_tokens: c.mean_tokens,
                mean_f1: c.mean_f1,
            });
        }
    }
    points
}

pub fn render_plot_csv(points: &[PlotPoint]) -> String {
    let mut out = String::from("method,n,mean_tokens,mean_f1\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{:.3}\n",
            p.method,
            p.n,
            fmt_tokens(p.mean_tokens),
            p.mean_f1
        ));
    }
    out
}
