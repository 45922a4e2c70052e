//! Report aggregation over evaluation results: method × n tables with
//! significance markers, win-rate matrices, compression ratios and
//! performance-vs-length plot data. Everything here is a pure function of
//! the results rows.

mod report;
mod wilcoxon;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{
    aggregate_table, compression_summary, matched_compression, plot_points, render_compression_markdown,
    render_plot_csv, render_table_csv, render_table_markdown, CellKey, CompressionRow, PlotPoint, ReportTable,
    TableCell, TableRow,
};
pub use wilcoxon::{average_ranks, wilcoxon_from_differences, wilcoxon_signed_rank, WilcoxonResult, EXACT_MAX_PAIRS};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("no scores to compare")]
    Empty,
    #[error("missing scores: {}", .0.join("; "))]
    Missing(Vec<String>),
    #[error("ragged coverage: {0}")]
    Ragged(String),
    #[error("duplicate result for {0}")]
    Duplicate(String),
    #[error("at least two methods are required")]
    TooFewMethods,
}

/// Scores of two methods aligned by dataset name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedScores {
    pub datasets: Vec<String>,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl PairedScores {
    /// Align two per-dataset score maps; any dataset present in only one is
    /// reported as a gap.
    pub fn align(first: &BTreeMap<String, f64>, second: &BTreeMap<String, f64>) -> Result<Self, StatsError> {
        let mut gaps = Vec::new();
        for name in first.keys().filter(|k| !second.contains_key(*k)) {
            gaps.push(format!("second method lacks {name}"));
        }
        for name in second.keys().filter(|k| !first.contains_key(*k)) {
            gaps.push(format!("first method lacks {name}"));
        }
        if !gaps.is_empty() {
            return Err(StatsError::Missing(gaps));
        }
        if first.is_empty() {
            return Err(StatsError::Empty);
        }
        Ok(Self {
            datasets: first.keys().cloned().collect(),
            first: first.values().copied().collect(),
            second: second.values().copied().collect(),
        })
    }

    /// `first - second` per dataset.
    pub fn differences(&self) -> Vec<f64> {
        self.first.iter().zip(&self.second).map(|(a, b)| a - b).collect()
    }
}

/// `***` below 0.001, `**` below 0.01, `*` below 0.05.
pub fn significance_marker(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateMatrix {
    pub methods: Vec<String>,
    pub dataset_count: usize,
    /// `wins[i][j]`: datasets where method i strictly beats method j.
    pub wins: Vec<Vec<usize>>,
}

impl WinRateMatrix {
    /// Fraction of datasets where `i` strictly beats `j`; `None` on the
    /// diagonal.
    pub fn cell(&self, i: usize, j: usize) -> Option<f64> {
        (i != j).then(|| self.wins[i][j] as f64 / self.dataset_count as f64)
    }

    pub fn tie_rate(&self, i: usize, j: usize) -> Option<f64> {
        (i != j).then(|| (self.dataset_count - self.wins[i][j] - self.wins[j][i]) as f64 / self.dataset_count as f64)
    }

    pub fn render_markdown(&self) -> String {
        let mut out = String::from("| |");
        for m in &self.methods {
            out.push_str(&format!(" {m} |"));
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(self.methods.len()));
        for (i, m) in self.methods.iter().enumerate() {
            out.push_str(&format!("\n| {m} |"));
            for j in 0..self.methods.len() {
                match self.cell(i, j) {
                    Some(v) => out.push_str(&format!(" {:.1}% |", v * 100.0)),
                    None => out.push_str(" - |"),
                }
            }
        }
        out.push('\n');
        out
    }
}

/// Pairwise strict-win fractions. Every method must cover the same datasets.
pub fn win_rate_matrix(scores: &[(String, BTreeMap<String, f64>)]) -> Result<WinRateMatrix, StatsError> {
    if scores.len() < 2 {
        return Err(StatsError::TooFewMethods);
    }
    let all: BTreeSet<&String> = scores.iter().flat_map(|(_, s)| s.keys()).collect();
    if all.is_empty() {
        return Err(StatsError::Empty);
    }
    let gaps: Vec<String> = scores
        .iter()
        .flat_map(|(method, s)| {
            all.iter()
                .filter(|d| !s.contains_key(**d))
                .map(move |d| format!("{method} lacks {d}"))
        })
        .collect();
    if !gaps.is_empty() {
        return Err(StatsError::Missing(gaps));
    }
    let wins = scores
        .iter()
        .map(|(_, a)| {
            scores
                .iter()
                .map(|(_, b)| all.iter().filter(|d| a[**d] > b[**d]).count())
                .collect()
        })
        .collect();
    Ok(WinRateMatrix {
        methods: scores.iter().map(|(m, _)| m.clone()).collect(),
        dataset_count: all.len(),
        wins,
    })
}
