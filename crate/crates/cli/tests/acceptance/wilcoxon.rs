use induct::stats::wilcoxon_from_differences;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensure;

/// 1-based ranks of `|d|`, ties sharing their average rank.
fn ranks(magnitudes: &[f64]) -> Vec<f64> {
    magnitudes
        .iter()
        .map(|m| {
            let below = magnitudes.iter().filter(|x| *x < m).count() as f64;
            let tied = magnitudes.iter().filter(|x| *x == m).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect()
}

/// Two-sided p by enumerating every sign assignment of the observed ranks.
fn enumerated_p(differences: &[f64]) -> f64 {
    let nonzero: Vec<f64> = differences.iter().copied().filter(|d| *d != 0.0).collect();
    let r = ranks(&nonzero.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let total: f64 = r.iter().sum();
    let plus: f64 = nonzero.iter().zip(&r).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let observed = plus.min(total - plus);
    let k = r.len();
    let mut extreme = 0u64;
    for mask in 0u32..(1 << k) {
        let w: f64 = (0..k).filter(|i| mask >> i & 1 == 1).map(|i| r[i]).sum();
        if w.min(total - w) <= observed + 1e-9 {
            extreme += 1;
        }
    }
    (extreme as f64 / (1u64 << k) as f64).min(1.0)
}

fn sample(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k)
        .map(|_| match rng.random_range(0..10) {
            0 => 0.0,
            1..=3 => rng.random_range(-3i32..=3) as f64 * 0.25,
            _ => rng.random_range(-1.0..1.0),
        })
        .collect()
}

pub fn check() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1945);
    let mut compared = 0;
    while compared < 500 {
        let k = rng.random_range(1..=10);
        let diffs = sample(&mut rng, k);
        if diffs.iter().all(|d| *d == 0.0) {
            continue;
        }
        let result = wilcoxon_from_differences(&diffs).map_err(|e| e.to_string())?;
        ensure!(result.exact, "k={k} did not use the exact distribution");
        let want = enumerated_p(&diffs);
        ensure!(
            (result.p_value - want).abs() <= 1e-12,
            "{diffs:?}: p {} vs enumeration {want}",
            result.p_value
        );
        compared += 1;
    }

    let hand = wilcoxon_from_differences(&[1.0, -2.0, 3.0, -4.0, 5.0]).map_err(|e| e.to_string())?;
    ensure!(hand.statistic == 6.0, "W for [1,-2,3,-4,5] is {}", hand.statistic);

    for trial in 0..1000 {
        let k = rng.random_range(1..=40);
        let diffs = sample(&mut rng, k);
        let flipped: Vec<f64> = diffs.iter().map(|d| -d).collect();
        let (a, b) = match (wilcoxon_from_differences(&diffs), wilcoxon_from_differences(&flipped)) {
            (Ok(a), Ok(b)) => (a, b),
            (a, b) => return Err(format!("trial {trial}: {a:?} / {b:?}")),
        };
        ensure!(
            a.p_value == b.p_value,
            "trial {trial}: p {} vs flipped {}",
            a.p_value,
            b.p_value
        );
    }
    Ok("500 exact comparisons, W=6, 1000 sign flips".into())
}
