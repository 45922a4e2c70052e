use std::time::{Duration, Instant};

use induct::corpus::LabeledExample;
use induct::evaluator::{macro_f1, Prediction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensure;

/// Confusion matrix with an extra INVALID column; F1 per declared label is
/// `2tp / (2tp + fp + fn)`, zero when the label never occurs on either side.
fn oracle(k: usize, golds: &[usize], preds: &[Option<usize>]) -> f64 {
    let mut matrix = vec![vec![0u32; k + 1]; k];
    for (g, p) in golds.iter().zip(preds) {
        matrix[*g][p.unwrap_or(k)] += 1;
    }
    let mut total = 0.0;
    for (label, row) in matrix.iter().enumerate() {
        let tp = row[label] as f64;
        let fp: f64 = (0..k).filter(|&g| g != label).map(|g| matrix[g][label] as f64).sum();
        let fn_: f64 = row.iter().map(|&c| c as f64).sum::<f64>() - tp;
        let denom = 2.0 * tp + fp + fn_;
        total += if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    total / k as f64
}

pub fn check() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF1);
    let mut invalid = 0;
    for case in 0..1000 {
        let k = rng.random_range(1..=6);
        let labels: Vec<String> = (0..k).map(|i| format!("label{i}")).collect();
        let n = rng.random_range(1..=40);
        let invalid_rate = rng.random_range(0.0..0.4);
        let golds: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let preds: Vec<Option<usize>> = (0..n)
            .map(|_| (!rng.random_bool(invalid_rate)).then(|| rng.random_range(0..k)))
            .collect();
        invalid += preds.iter().filter(|p| p.is_none()).count();

        let examples: Vec<LabeledExample> = golds
            .iter()
            .enumerate()
            .map(|(i, &g)| LabeledExample::new(format!("e{i}"), format!("text {i}"), labels[g].clone()))
            .collect();
        let predictions: Vec<Prediction> = preds
            .iter()
            .enumerate()
            .rev()
            .map(|(i, p)| Prediction {
                example_id: format!("e{i}"),
                raw: p.map_or("???".into(), |l| labels[l].clone()),
                matched_label: p.map(|l| labels[l].clone()),
            })
            .collect();
        let got = macro_f1(&predictions, &examples, &labels).map_err(|e| format!("case {case}: {e}"))?;
        let want = oracle(k, &golds, &preds);
        ensure!((got - want).abs() <= 1e-12, "case {case}: got {got}, oracle {want}");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}, limit 5s");
    Ok(format!(
        "1000 instances, {invalid} INVALID predictions, max |diff| <= 1e-12"
    ))
}
