//! Two-sided Wilcoxon signed-rank test on paired differences.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{PairedScores, StatsError};

/// Largest nonzero-pair count tested by exact enumeration.
pub const EXACT_MAX_PAIRS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub nonzero: usize,
    pub exact: bool,
    /// Every difference was zero.
    pub degenerate: bool,
}

/// Average ranks of `values` (1-based), with ties sharing the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn wilcoxon_signed_rank(pairs: &PairedScores) -> Result<WilcoxonResult, StatsError> {
    wilcoxon_from_differences(&pairs.differences())
}

pub fn wilcoxon_from_differences(differences: &[f64]) -> Result<WilcoxonResult, StatsError> {
    if differences.is_empty() {
        return Err(StatsError::Empty);
    }
    let nonzero: Vec<f64> = differences.iter().copied().filter(|d| *d != 0.0).collect();
    if nonzero.is_empty() {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            w_plus: 0.0,
            w_minus: 0.0,
            p_value: 1.0,
            nonzero: 0,
            exact: true,
            degenerate: true,
        });
    }
    let magnitudes: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&magnitudes);
    let w_plus: f64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total = (nonzero.len() * (nonzero.len() + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let statistic = w_plus.min(w_minus);

    let exact = nonzero.len() <= EXACT_MAX_PAIRS;
    let p_value = if exact {
        exact_p(&ranks, statistic)
    } else {
        normal_p(&magnitudes, statistic)
    };
    Ok(WilcoxonResult {
        statistic,
        w_plus,
        w_minus,
        p_value,
        nonzero: nonzero.len(),
        exact,
        degenerate: false,
    })
}

/// `min(1, 2 P(T <= w))` where T is the positive-rank sum under uniformly
/// random signs. Ranks are doubled so tied half-ranks stay integral.
fn exact_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0f64; max + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    let limit = (w * 2.0).round() as usize;
    let at_most: f64 = counts[..=limit.min(max)].iter().sum();
    let total = 2f64.powi(ranks.len() as i32);
    (2.0 * at_most / total).min(1.0)
}

/// Normal approximation with tie correction, no continuity correction.
fn normal_p(magnitudes: &[f64], w: f64) -> f64 {
    let n = magnitudes.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = magnitudes.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    for group in sorted.chunk_by(|a, b| a == b) {
        let t = group.len() as f64;
        tie_term += t * t * t - t;
    }
    let variance = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    let z = (w - mean) / variance.sqrt();
    let normal = Normal::standard();
    (2.0 * normal.cdf(z)).min(1.0)
}
