//! Summary statistics for Monte Carlo aggregates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Arithmetic mean; zero for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean (sample standard deviation over `sqrt(n)`);
/// zero when fewer than two samples exist.
pub fn stderr(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Seeded bootstrap lower confidence bound for the mean: the `alpha`
/// quantile of `resamples` resampled means. `alpha = 0.05` gives a
/// one-sided 95% bound.
pub fn bootstrap_mean_lower(xs: &[f64], resamples: usize, alpha: f64, seed: u64) -> f64 {
    assert!(!xs.is_empty(), "bootstrap needs samples");
    assert!(resamples > 0 && (0.0..1.0).contains(&alpha));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = xs.len();
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut acc = 0.0;
        for _ in 0..n {
            acc += xs[rng.gen_range(0..n)];
        }
        means.push(acc / n as f64);
    }
    means.sort_by(|a, b| a.total_cmp(b));
    let idx = ((alpha * resamples as f64) as usize).min(resamples - 1);
    means[idx]
}
