//! Seeded synthetic instances for tests, benchmarks, and the verification
//! suites. All generators are deterministic functions of their seed.

use crate::problem::{CompositeProblem, Dataset, Loss};
use crate::rng::SplitMix64;

/// A generated Lasso instance together with its planted ground truth.
#[derive(Debug)]
pub struct LassoInstance {
    pub problem: CompositeProblem,
    /// Indices of the planted nonzero coefficients.
    pub planted_support: Vec<usize>,
    pub lambda: f64,
    /// Smallest lambda that zeroes the solution: ||grad f(0)||_inf.
    pub lambda_max: f64,
}

/// Dense Gaussian design, planted sparse signal, additive noise on the
/// targets. lambda is chosen as a fraction of ||grad f(0)||_inf, so
/// `lambda_frac >= 1` makes the origin optimal.
pub fn gaussian_lasso(
    n_samples: usize,
    n_features: usize,
    planted: usize,
    noise: f64,
    lambda_frac: f64,
    seed: u64,
) -> LassoInstance {
    assert!(planted <= n_features);
    let mut rng = SplitMix64::new(seed);
    let mut triplets = Vec::with_capacity(n_samples * n_features);
    let mut design = vec![0.0; n_samples * n_features];
    for i in 0..n_samples {
        for j in 0..n_features {
            let v = rng.next_normal();
            design[i * n_features + j] = v;
            triplets.push((i, j, v));
        }
    }

    let planted_support = draw_support(&mut rng, n_features, planted);
    let mut signal = vec![0.0; n_features];
    for &j in &planted_support {
        let sign = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
        signal[j] = sign * (1.0 + rng.next_f64());
    }

    let labels: Vec<f64> = (0..n_samples)
        .map(|i| {
            let row = &design[i * n_features..(i + 1) * n_features];
            let clean: f64 = row.iter().zip(signal.iter()).map(|(a, s)| a * s).sum();
            clean + noise * rng.next_normal()
        })
        .collect();

    // grad f(0) = -A^T b / N for the least-squares loss.
    let mut grad0 = vec![0.0; n_features];
    for i in 0..n_samples {
        let row = &design[i * n_features..(i + 1) * n_features];
        for (g, a) in grad0.iter_mut().zip(row.iter()) {
            *g -= a * labels[i] / n_samples as f64;
        }
    }
    let lambda_max = grad0.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let lambda = lambda_frac * lambda_max;

    let data = Dataset::from_triplets(n_samples, n_features, &triplets, labels)
        .expect("generated triplets are well formed");
    let problem = CompositeProblem::new(data, Loss::LeastSquares, lambda)
        .expect("generated dataset is valid");
    LassoInstance {
        problem,
        planted_support,
        lambda,
        lambda_max,
    }
}

/// Dense Gaussian design with labels from a planted half-space plus label
/// noise. Both classes are guaranteed present.
pub fn gaussian_logistic(
    n_samples: usize,
    n_features: usize,
    lambda: f64,
    flip_prob: f64,
    seed: u64,
) -> CompositeProblem {
    assert!(n_samples >= 2);
    let mut rng = SplitMix64::new(seed);
    let mut triplets = Vec::with_capacity(n_samples * n_features);
    let mut design = vec![0.0; n_samples * n_features];
    for i in 0..n_samples {
        for j in 0..n_features {
            let v = rng.next_normal();
            design[i * n_features + j] = v;
            triplets.push((i, j, v));
        }
    }
    let planted: Vec<f64> = (0..n_features).map(|_| rng.next_normal()).collect();
    let mut labels: Vec<f64> = (0..n_samples)
        .map(|i| {
            let row = &design[i * n_features..(i + 1) * n_features];
            let margin: f64 = row.iter().zip(planted.iter()).map(|(a, w)| a * w).sum();
            let y = if margin >= 0.0 { 1.0 } else { -1.0 };
            if rng.next_f64() < flip_prob {
                -y
            } else {
                y
            }
        })
        .collect();
    // Degenerate draws could land on one side; force both classes.
    if labels.iter().all(|y| *y == labels[0]) {
        labels[0] = -labels[0];
    }

    let data = Dataset::from_triplets(n_samples, n_features, &triplets, labels)
        .expect("generated triplets are well formed");
    CompositeProblem::new(data, Loss::Logistic, lambda).expect("labels are binary")
}

/// Small well-behaved Lasso for the desk-scale verification suites.
pub fn desk_lasso(n_samples: usize, n_features: usize, seed: u64) -> LassoInstance {
    gaussian_lasso(
        n_samples,
        n_features,
        (n_features / 5).max(1),
        0.05,
        0.3,
        seed,
    )
}

fn draw_support(rng: &mut SplitMix64, n: usize, k: usize) -> Vec<usize> {
    // Partial Fisher-Yates over the index range.
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + rng.below((n - i) as u64) as usize;
        idx.swap(i, j);
    }
    let mut support = idx[..k].to_vec();
    support.sort_unstable();
    support
}
