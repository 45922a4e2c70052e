use std::time::{Duration, Instant};

use induct::grpo::{clipped_objective, group_advantages, objective_logprob_gradient, unclipped_surrogate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ensure;

const LO: f64 = 0.2;
const HI: f64 = 0.4;

/// Softmax policy over a fixed set of responses with three parameters;
/// response `k` has feature vector `features[k]`.
struct ToyPolicy {
    features: Vec<[f64; 3]>,
}

impl ToyPolicy {
    fn logprobs(&self, theta: &[f64; 3]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .features
            .iter()
            .map(|f| f.iter().zip(theta).map(|(a, b)| a * b).sum())
            .collect();
        let max = logits.iter().copied().fold(f64::MIN, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits.iter().map(|l| l - lse).collect()
    }

    fn ratios(&self, theta: &[f64; 3], old: &[f64]) -> Vec<f64> {
        self.logprobs(theta)
            .iter()
            .zip(old)
            .map(|(n, o)| (n - o).exp())
            .collect()
    }

    fn objective(&self, theta: &[f64; 3], old: &[f64], adv: &[f64]) -> f64 {
        clipped_objective(&self.ratios(theta, old), adv, LO, HI).unwrap()
    }

    /// Chain rule through `d logp_k / d theta = f_k - E_pi[f]`.
    fn gradient(&self, theta: &[f64; 3], old: &[f64], adv: &[f64]) -> [f64; 3] {
        let logp = self.logprobs(theta);
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let mut mean = [0.0; 3];
        for (p, f) in probs.iter().zip(&self.features) {
            for d in 0..3 {
                mean[d] += p * f[d];
            }
        }
        let outer = objective_logprob_gradient(&self.ratios(theta, old), adv, LO, HI).unwrap();
        let mut grad = [0.0; 3];
        for (g, f) in outer.iter().zip(&self.features) {
            for d in 0..3 {
                grad[d] += g * (f[d] - mean[d]);
            }
        }
        grad
    }
}

fn crosses_boundary(ratios_a: &[f64], ratios_b: &[f64]) -> bool {
    let side = |r: f64| (r < 1.0 - LO, r > 1.0 + HI);
    ratios_a.iter().zip(ratios_b).any(|(a, b)| side(*a) != side(*b))
}

fn toy_gradient_check(rng: &mut ChaCha8Rng) -> Result<(usize, f64), String> {
    let normal: Normal<f64> = Normal::new(0.0, 1.0).unwrap();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for trial in 0..500 {
        let g = rng.random_range(2..=8);
        let policy = ToyPolicy {
            features: (0..g)
                .map(|_| [normal.sample(rng), normal.sample(rng), normal.sample(rng)])
                .collect(),
        };
        let theta_old = [normal.sample(rng), normal.sample(rng), normal.sample(rng)];
        let old = policy.logprobs(&theta_old);
        let theta: [f64; 3] = std::array::from_fn(|d| theta_old[d] + 0.3 * normal.sample(rng));
        let rewards: Vec<f64> = (0..g).map(|_| rng.random_range(0.0..1.0)).collect();
        let adv = group_advantages(&rewards).unwrap();

        let analytic = policy.gradient(&theta, &old, &adv);
        let h = 1e-6;
        let mut numeric = [0.0; 3];
        let mut crossed = false;
        for d in 0..3 {
            let (mut up, mut down) = (theta, theta);
            up[d] += h;
            down[d] -= h;
            let base = policy.ratios(&theta, &old);
            crossed |= crosses_boundary(&base, &policy.ratios(&up, &old));
            crossed |= crosses_boundary(&base, &policy.ratios(&down, &old));
            numeric[d] = (policy.objective(&up, &old, &adv) - policy.objective(&down, &old, &adv)) / (2.0 * h);
        }
        if crossed {
            continue;
        }
        let norm = |v: &[f64; 3]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff = [
            numeric[0] - analytic[0],
            numeric[1] - analytic[1],
            numeric[2] - analytic[2],
        ];
        let scale = norm(&analytic);
        if scale < 1e-8 {
            ensure!(
                norm(&numeric) < 1e-8,
                "trial {trial}: analytic zero, numeric {numeric:?}"
            );
        } else {
            let rel = norm(&diff) / scale;
            worst = worst.max(rel);
            ensure!(
                rel <= 1e-4,
                "trial {trial}: relative error {rel:e}, analytic {analytic:?}, numeric {numeric:?}"
            );
        }
        checked += 1;
    }
    Ok((checked, worst))
}

pub fn check() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6290);
    let log_ratio: Normal<f64> = Normal::new(0.0, 0.4).unwrap();
    for group in 0..10_000 {
        let g = rng.random_range(2..=64);
        let rewards: Vec<f64> = if group % 10 == 0 {
            vec![rng.random_range(0.0..1.0); g]
        } else {
            (0..g).map(|_| rng.random_range(0.0..1.0)).collect()
        };
        let adv = group_advantages(&rewards).map_err(|e| e.to_string())?;
        let sum: f64 = adv.iter().sum();
        ensure!(
            sum.abs() <= 1e-12 * g as f64,
            "group {group}: advantages sum to {sum:e}"
        );

        let ratios: Vec<f64> = (0..g).map(|_| log_ratio.sample(&mut rng).exp()).collect();
        let clipped = clipped_objective(&ratios, &adv, LO, HI).unwrap();
        let plain = unclipped_surrogate(&ratios, &adv).unwrap();
        ensure!(clipped <= plain, "group {group}: clipped {clipped} > unclipped {plain}");

        let inside: Vec<f64> = (0..g).map(|_| rng.random_range(0.8..=1.4)).collect();
        let (a, b) = (
            clipped_objective(&inside, &adv, LO, HI).unwrap(),
            unclipped_surrogate(&inside, &adv).unwrap(),
        );
        ensure!(a == b, "group {group}: inside the band {a} != {b}");
    }

    let hand_up = clipped_objective(&[1.5], &[1.0], LO, HI).unwrap();
    ensure!(hand_up == 1.4, "r=1.5, A=1 gave {hand_up}");
    let hand_down = clipped_objective(&[0.5], &[-1.0], LO, HI).unwrap();
    ensure!(hand_down == -0.8, "r=0.5, A=-1 gave {hand_down}");

    let (checked, worst) = toy_gradient_check(&mut rng)?;
    ensure!(checked >= 100, "only {checked} gradient trials avoided clip boundaries");
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}, limit 10s");
    Ok(format!(
        "10000 groups; {checked} finite-difference trials, worst relative error {worst:.1e}"
    ))
}
