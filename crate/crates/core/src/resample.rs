//! Bootstrap resampling and percentile helpers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Generator for replicate `b` of a procedure seeded with `seed`.
pub fn replicate_rng(seed: u64, b: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(b as u64))
}

/// `n` row indices drawn uniformly with replacement.
pub fn resample_indices<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Runs `n_boot` independent replicates in parallel. Replicate `b` gets
/// a generator seeded with `seed + b`; outputs are returned in replicate
/// order, `None` marking a failed replicate.
pub fn run_replicates<T, F>(n_boot: usize, seed: u64, f: F) -> Vec<Option<T>>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> Option<T> + Sync,
{
    (0..n_boot)
        .into_par_iter()
        .map(|b| f(&mut replicate_rng(seed, b)))
        .collect()
}

/// Percentile `q` in [0, 100] of sorted data by linear interpolation
/// between closest ranks.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let h = (sorted.len() - 1) as f64 * (q / 100.0).clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, q)
}

/// Two-sided percentile interval at the given level (0.95 → 2.5/97.5).
pub fn percentile_interval(values: &[f64], level: f64) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let a = 50.0 * (1.0 - level);
    (percentile_sorted(&v, a), percentile_sorted(&v, 100.0 - a))
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two
/// values.
pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}
