//! Stratified greedy nearest-neighbour propensity score matching.

use std::collections::BTreeSet;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use super::{binarize_at_median, collect_replicates, propensity_from, CausalModelSpec, EffectError};
use crate::dataset::{ColumnKind, Table};
use crate::resample::{percentile_interval, resample_indices, run_replicates};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsmOptions {
    pub caliper: f64,
    /// Binary column matched exactly.
    pub stratum: String,
    pub n_boot: usize,
}

impl Default for PsmOptions {
    fn default() -> Self {
        PsmOptions {
            caliper: 0.05,
            stratum: "SEX_MALE".into(),
            n_boot: 800,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub variable: String,
    /// `None` when both groups are constant at different values.
    pub smd_before: Option<f64>,
    pub smd_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `(treated row, control row)` in matching order.
    pub pairs: Vec<(usize, usize)>,
    pub att: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub balance: Vec<BalanceRow>,
    pub caliper: f64,
    pub n_pairs: usize,
    pub n_treated: usize,
    /// Treatment value above which a row counts as treated.
    pub threshold: f64,
    pub n_bootstrap: usize,
    pub seed: u64,
}

fn mean_var(v: &[f64], binary: bool) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if binary {
        m * (1.0 - m)
    } else if v.len() > 1 {
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var)
}

/// Standardized mean difference with the pooled-variance denominator
/// `√((var_T + var_C)/2)`; proportions use `p(1 − p)`.
pub fn smd(treated: &[f64], control: &[f64], binary: bool) -> Option<f64> {
    let (mt, vt) = mean_var(treated, binary);
    let (mc, vc) = mean_var(control, binary);
    let denom = ((vt + vc) / 2.0).sqrt();
    if denom > 0.0 {
        Some((mt - mc) / denom)
    } else if mt == mc {
        Some(0.0)
    } else {
        None
    }
}

/// Greedy matching without replacement inside one stratum. Treated units
/// are visited by descending score (ties by row index); each takes the
/// nearest remaining control, preferring the lower score and then the
/// lower row index on equal distance, if it lies within the caliper.
fn match_stratum(treated: &[usize], controls: &[usize], ps: &[f64], caliper: f64) -> Vec<(usize, usize)> {
    let mut order = treated.to_vec();
    order.sort_by(|&a, &b| ps[b].total_cmp(&ps[a]).then(a.cmp(&b)));
    let mut pool: BTreeSet<(OrderedFloat<f64>, usize)> = controls.iter().map(|&c| (OrderedFloat(ps[c]), c)).collect();
    let mut pairs = Vec::new();
    for t in order {
        let key = OrderedFloat(ps[t]);
        // nearest score at or below and at or above; lowest row within a score
        let below = pool
            .range(..=(key, usize::MAX))
            .next_back()
            .and_then(|b| pool.range((b.0, 0)..).next())
            .copied();
        let above = pool.range((key, 0)..).next().copied();
        let pick = match (below, above) {
            (Some(b), Some(a)) => {
                let db = ps[t] - b.0 .0;
                let da = a.0 .0 - ps[t];
                if da < db {
                    Some(a)
                } else {
                    Some(b)
                }
            }
            (b, a) => b.or(a),
        };
        if let Some(c) = pick {
            if (c.0 .0 - ps[t]).abs() <= caliper {
                pool.remove(&c);
                pairs.push((t, c.1));
            }
        }
    }
    pairs
}

/// Average effect on the treated of `treatment > median` by propensity
/// score matching with exact matching on `opts.stratum`. Scores come from
/// a logistic regression of the binary treatment on the adjustment set.
/// The interval resamples matched pairs.
pub fn psm_att(table: &Table, spec: &CausalModelSpec, opts: &PsmOptions, seed: u64) -> Result<MatchResult, EffectError> {
    spec.validate()?;
    if !(opts.caliper >= 0.0) {
        return Err(EffectError::InvalidArgument("caliper must be nonnegative".into()));
    }
    if opts.n_boot == 0 {
        return Err(EffectError::InvalidArgument("n_boot must be positive".into()));
    }
    let (threshold, t) = binarize_at_median(table.values(&spec.treatment)?);
    let y = table.binary_values(&spec.outcome)?;
    let strat = table.binary_values(&opts.stratum)?;
    let x = table.matrix(&spec.adjustment)?;
    let ps = propensity_from(&x, &t)?;

    let mut pairs = Vec::new();
    for value in [0.0, 1.0] {
        let rows: Vec<usize> = (0..table.n_rows()).filter(|&i| strat[i] == value).collect();
        let treated: Vec<usize> = rows.iter().copied().filter(|&i| t[i] == 1.0).collect();
        let controls: Vec<usize> = rows.iter().copied().filter(|&i| t[i] == 0.0).collect();
        for (group, g) in [("treated", &treated), ("control", &controls)] {
            if g.is_empty() {
                return Err(EffectError::EmptyStratum {
                    stratum: opts.stratum.clone(),
                    value,
                    group,
                });
            }
        }
        pairs.extend(match_stratum(&treated, &controls, &ps, opts.caliper));
    }
    if pairs.is_empty() {
        return Err(EffectError::NoPairs);
    }

    let diffs: Vec<f64> = pairs.iter().map(|&(a, b)| y[a] - y[b]).collect();
    let att = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let boot = run_replicates(opts.n_boot, seed, |rng| {
        let idx = resample_indices(rng, diffs.len());
        Some(idx.iter().map(|&k| diffs[k]).sum::<f64>() / idx.len() as f64)
    });
    let (draws, _) = collect_replicates(boot)?;
    let (ci_low, ci_high) = percentile_interval(&draws, 0.95);

    let mut balance = Vec::new();
    for name in spec.covariates() {
        let col = table.column(&name)?;
        let v = &col.values;
        let binary = col.kind == ColumnKind::Binary;
        let pick = |rows: &mut dyn Iterator<Item = usize>| rows.map(|i| v[i]).collect::<Vec<f64>>();
        let before_t = pick(&mut (0..v.len()).filter(|&i| t[i] == 1.0));
        let before_c = pick(&mut (0..v.len()).filter(|&i| t[i] == 0.0));
        let after_t = pick(&mut pairs.iter().map(|p| p.0));
        let after_c = pick(&mut pairs.iter().map(|p| p.1));
        balance.push(BalanceRow {
            variable: name,
            smd_before: smd(&before_t, &before_c, binary),
            smd_after: smd(&after_t, &after_c, binary),
        });
    }

    Ok(MatchResult {
        n_pairs: pairs.len(),
        n_treated: t.iter().filter(|v| **v == 1.0).count(),
        pairs,
        att,
        ci_low,
        ci_high,
        balance,
        caliper: opts.caliper,
        threshold,
        n_bootstrap: opts.n_boot,
        seed,
    })
}
