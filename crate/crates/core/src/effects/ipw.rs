//! Stabilized inverse probability weighting with percentile capping.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{binarize_at_median, collect_replicates, propensity_from, CausalModelSpec, EffectError};
use crate::dataset::Table;
use crate::resample::{percentile, percentile_interval, resample_indices, run_replicates};

/// Scores closer than this to 0 or 1 violate positivity.
pub const POSITIVITY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpwOptions {
    /// Weights above this percentile are capped at its value.
    pub trim_percentile: f64,
    pub n_boot: usize,
}

impl Default for IpwOptions {
    fn default() -> Self {
        IpwOptions {
            trim_percentile: 98.0,
            n_boot: 800,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub max: f64,
    pub mean: f64,
    pub trim_threshold: f64,
    pub n_capped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpwResult {
    pub ate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub weight_summary: WeightSummary,
    pub effective_sample_size: f64,
    pub threshold: f64,
    pub n_bootstrap: usize,
    pub n_failed: usize,
    pub seed: u64,
}

struct Weighted {
    ate: f64,
    weights: Vec<f64>,
    summary: WeightSummary,
}

/// Stabilized weights `P(T=t) / P̂(T=t | Z)`, capped at the given
/// percentile, and the Hajek difference of weighted outcome means.
fn weighted_estimate(x: &DMatrix<f64>, t: &[f64], y: &[f64], trim: f64) -> Result<Weighted, EffectError> {
    let ps = propensity_from(x, t)?;
    let bad: Vec<usize> = ps
        .iter()
        .enumerate()
        .filter(|(_, p)| **p < POSITIVITY_EPS || **p > 1.0 - POSITIVITY_EPS)
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        return Err(EffectError::Positivity { rows: bad });
    }
    let n = t.len() as f64;
    let p1 = t.iter().sum::<f64>() / n;
    let mut w: Vec<f64> = ps
        .iter()
        .zip(t)
        .map(|(p, ti)| if *ti == 1.0 { p1 / p } else { (1.0 - p1) / (1.0 - p) })
        .collect();
    let cap = percentile(&w, trim);
    let mut n_capped = 0;
    for wi in &mut w {
        if *wi > cap {
            *wi = cap;
            n_capped += 1;
        }
    }
    let (mut sw1, mut swy1, mut sw0, mut swy0) = (0.0, 0.0, 0.0, 0.0);
    for ((wi, ti), yi) in w.iter().zip(t).zip(y) {
        if *ti == 1.0 {
            sw1 += wi;
            swy1 += wi * yi;
        } else {
            sw0 += wi;
            swy0 += wi * yi;
        }
    }
    if sw1 == 0.0 || sw0 == 0.0 {
        return Err(EffectError::InvalidArgument("treatment is constant".into()));
    }
    let summary = WeightSummary {
        max: w.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: w.iter().sum::<f64>() / n,
        trim_threshold: cap,
        n_capped,
    };
    Ok(Weighted {
        ate: swy1 / sw1 - swy0 / sw0,
        weights: w,
        summary,
    })
}

/// Average effect of `treatment > median` by stabilized IPW. The interval
/// resamples rows and re-estimates the propensity model and weights on
/// every resample.
pub fn ipw_ate(table: &Table, spec: &CausalModelSpec, opts: &IpwOptions, seed: u64) -> Result<IpwResult, EffectError> {
    spec.validate()?;
    if !(opts.trim_percentile > 0.0 && opts.trim_percentile <= 100.0) {
        return Err(EffectError::InvalidArgument("trim percentile must lie in (0, 100]".into()));
    }
    if opts.n_boot == 0 {
        return Err(EffectError::InvalidArgument("n_boot must be positive".into()));
    }
    let (threshold, t) = binarize_at_median(table.values(&spec.treatment)?);
    let y = table.binary_values(&spec.outcome)?;
    let x = table.matrix(&spec.adjustment)?;
    let point = weighted_estimate(&x, &t, y, opts.trim_percentile)?;
    let ess = {
        let s: f64 = point.weights.iter().sum();
        let s2: f64 = point.weights.iter().map(|w| w * w).sum();
        s * s / s2
    };
    let n = t.len();
    let boot = run_replicates(opts.n_boot, seed, |rng| {
        let rows = resample_indices(rng, n);
        let xb = x.select_rows(&rows);
        let tb: Vec<f64> = rows.iter().map(|&i| t[i]).collect();
        let yb: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        weighted_estimate(&xb, &tb, &yb, opts.trim_percentile).ok().map(|w| w.ate)
    });
    let (draws, n_failed) = collect_replicates(boot)?;
    let (ci_low, ci_high) = percentile_interval(&draws, 0.95);
    Ok(IpwResult {
        ate: point.ate,
        ci_low,
        ci_high,
        weight_summary: point.summary,
        effective_sample_size: ess,
        threshold,
        n_bootstrap: opts.n_boot,
        n_failed,
        seed,
    })
}
