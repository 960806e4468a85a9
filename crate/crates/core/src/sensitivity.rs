//! E-values for unmeasured confounding.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Table;
use crate::effects::{gcomp_contrasts, CausalModelSpec, EffectError};
use crate::resample::mean;

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("risk ratio must be positive and finite, got {0}")]
    InvalidRiskRatio(f64),
    #[error("risks must lie in (0, 1), got {0}")]
    InvalidRisk(f64),
    #[error("intervention magnitudes must be nonnegative and finite, got {0}")]
    InvalidIntervention(f64),
    #[error(transparent)]
    Effect(#[from] EffectError),
}

pub fn causal_risk_ratio(risk_high: f64, risk_low: f64) -> Result<f64, SensitivityError> {
    for r in [risk_high, risk_low] {
        if !(r > 0.0 && r < 1.0) {
            return Err(SensitivityError::InvalidRisk(r));
        }
    }
    Ok(risk_high / risk_low)
}

/// `RR + √(RR(RR − 1))`; a protective ratio is replaced by its reciprocal
/// first.
pub fn e_value(rr: f64) -> Result<f64, SensitivityError> {
    if !(rr > 0.0 && rr.is_finite()) {
        return Err(SensitivityError::InvalidRiskRatio(rr));
    }
    let rr = if rr < 1.0 { 1.0 / rr } else { rr };
    Ok(rr + (rr * (rr - 1.0)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalueRow {
    pub intervention_mmhg: f64,
    pub ace: f64,
    pub ace_ci_low: f64,
    pub ace_ci_high: f64,
    pub risk_ratio: f64,
    /// Risk ratio implied by the interval bound nearer the null (1 when
    /// the interval covers 0).
    pub risk_ratio_ci: f64,
    pub e_point: f64,
    pub e_ci: f64,
}

/// E-values for lowering the treatment from its cohort mean by each
/// magnitude. All contrasts share one set of g-computation bootstrap
/// resamples. Rows are ordered by magnitude, largest first.
pub fn e_value_table(
    table: &Table,
    spec: &CausalModelSpec,
    interventions: &[f64],
    n_boot: usize,
    seed: u64,
) -> Result<Vec<EvalueRow>, SensitivityError> {
    let mut deltas = interventions.to_vec();
    for d in &deltas {
        if !(d.is_finite() && *d >= 0.0) {
            return Err(SensitivityError::InvalidIntervention(*d));
        }
    }
    deltas.sort_by(|a, b| b.total_cmp(a));
    let s1 = mean(table.values(&spec.treatment).map_err(EffectError::from)?);
    let contrasts: Vec<(f64, f64)> = deltas.iter().map(|d| (s1, s1 - d)).collect();
    let aces = gcomp_contrasts(table, spec, &contrasts, n_boot, seed)?;
    deltas
        .iter()
        .zip(aces)
        .map(|(&d, a)| {
            let risk_ratio = causal_risk_ratio(a.risk_high, a.risk_low)?;
            let near_null = if a.ci_low > 0.0 {
                Some(a.ci_low)
            } else if a.ci_high < 0.0 {
                Some(a.ci_high)
            } else {
                None
            };
            let risk_ratio_ci = near_null.map_or(1.0, |b| (a.risk_low + b) / a.risk_low);
            Ok(EvalueRow {
                intervention_mmhg: d,
                ace: a.ace,
                ace_ci_low: a.ci_low,
                ace_ci_high: a.ci_high,
                risk_ratio,
                risk_ratio_ci,
                e_point: e_value(risk_ratio)?,
                e_ci: e_value(risk_ratio_ci)?,
            })
        })
        .collect()
}
