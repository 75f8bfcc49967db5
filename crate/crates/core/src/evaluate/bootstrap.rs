use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EvaluateError;

/// Two-sided paired bootstrap p-value for the mean of `a − b`.
///
/// Differences are centered on their mean (the null hypothesis), resampled
/// with replacement `resamples` times, and the p-value is
/// `(#{|mean*| ≥ |observed|} + 1) / (resamples + 1)`.
pub fn paired_bootstrap(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<f64, EvaluateError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(EvaluateError::BootstrapLengths(a.len(), b.len()));
    }
    let n = a.len();
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let observed = diffs.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = diffs.iter().map(|d| d - observed).collect();
    let threshold = observed.abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0usize;
    for _ in 0..resamples {
        let mean = (0..n).map(|_| centered[rng.gen_range(0..n)]).sum::<f64>() / n as f64;
        if mean.abs() >= threshold {
            extreme += 1;
        }
    }
    Ok((extreme + 1) as f64 / (resamples + 1) as f64)
}
