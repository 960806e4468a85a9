//! Discrimination and calibration metrics for binary predictions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cate::rank::midranks;

/// Area under the ROC curve from the rank-sum identity; tied scores count
/// one half. `None` when either class is empty.
pub fn auroc(y: &[f64], score: &[f64]) -> Option<f64> {
    let n1 = y.iter().filter(|v| **v == 1.0).count();
    let n0 = y.len() - n1;
    if n1 == 0 || n0 == 0 {
        return None;
    }
    let (ranks, _) = midranks(score);
    let r1: f64 = ranks.iter().zip(y).filter(|(_, v)| **v == 1.0).map(|(r, _)| r).sum();
    let (n1, n0) = (n1 as f64, n0 as f64);
    Some((r1 - n1 * (n1 + 1.0) / 2.0) / (n1 * n0))
}

/// Step-wise average precision: `Σ (R_k − R_{k−1}) P_k` over descending
/// distinct score thresholds.
pub fn average_precision(y: &[f64], score: &[f64]) -> Option<f64> {
    let pos = y.iter().filter(|v| **v == 1.0).count();
    if pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]));
    let (mut tp, mut seen, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = score[order[i]];
        while i < order.len() && score[order[i]] == s {
            tp += (y[order[i]] == 1.0) as usize;
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * tp as f64 / seen as f64;
        prev_recall = recall;
    }
    Some(ap)
}

pub fn brier(y: &[f64], p: &[f64]) -> f64 {
    y.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

/// Fold label per row with each class shuffled separately and dealt
/// round-robin, so class proportions agree across folds.
pub fn stratified_folds(y: &[f64], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0; y.len()];
    for class in [0.0, 1.0] {
        let mut rows: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        rows.shuffle(&mut rng);
        for (k, i) in rows.into_iter().enumerate() {
            out[i] = k % folds;
        }
    }
    out
}
