//! Falsification checks: a permutation null for the g-computation ACE and
//! placebo regressions along causally impossible directions.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnKind, Table};
use crate::effects::{collect_replicates, require_converged, CausalModelSpec, EffectError, OutcomeModel};
use crate::regress::dist::{normal_quantile, normal_two_sided, student_t_quantile, student_t_two_sided};
use crate::regress::{logistic_fit, ols_fit, Intercept, LogisticOptions};
use crate::resample::{mean, run_replicates, sample_sd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub observed_ace: f64,
    pub null_mean: f64,
    pub null_sd: f64,
    /// `(1 + #{|null| ≥ |observed|}) / (n + 1)`.
    pub p_value: f64,
    pub n_permutations: usize,
    pub seed: u64,
    /// Null ACEs in permutation order.
    pub null_samples: Vec<f64>,
}

/// Permutation test of the g-computation ACE: the treatment column is
/// shuffled (covariates and outcome held fixed) and the ACE recomputed
/// `n_perm` times.
pub fn permutation_refute(
    table: &Table,
    spec: &CausalModelSpec,
    s1: f64,
    s0: f64,
    n_perm: usize,
    seed: u64,
) -> Result<PermutationResult, EffectError> {
    if n_perm == 0 {
        return Err(EffectError::InvalidArgument("n_perm must be positive".into()));
    }
    let model = OutcomeModel::fit(table, spec)?;
    let observed_ace = model.interventional_risk(s1) - model.interventional_risk(s0);
    let t = table.values(&spec.treatment)?.to_vec();
    let results = run_replicates(n_perm, seed, |rng| {
        let mut shuffled = t.clone();
        shuffled.shuffle(rng);
        let permuted = table.with_values(&spec.treatment, shuffled).ok()?;
        let m = OutcomeModel::fit(&permuted, spec).ok()?;
        Some(m.interventional_risk(s1) - m.interventional_risk(s0))
    });
    let (null_samples, _) = collect_replicates(results)?;
    let extreme = null_samples.iter().filter(|v| v.abs() >= observed_ace.abs()).count();
    Ok(PermutationResult {
        observed_ace,
        null_mean: mean(&null_samples),
        null_sd: sample_sd(&null_samples),
        p_value: (1 + extreme) as f64 / (null_samples.len() + 1) as f64,
        n_permutations: null_samples.len(),
        seed,
        null_samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboResult {
    pub instrument: String,
    pub target: String,
    pub adjust: Vec<String>,
    pub coefficient: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    /// `p_value > 0.05`.
    pub passed: bool,
}

pub const PLACEBO_ALPHA: f64 = 0.05;

/// Regresses `target` on `instrument` plus `adjust` (OLS with t-based
/// inference for a continuous target, logistic with Wald-normal inference
/// for a binary one) and reports the instrument coefficient.
pub fn placebo_instrument_test<S: AsRef<str>>(
    table: &Table,
    instrument: &str,
    target: &str,
    adjust: &[S],
) -> Result<PlaceboResult, EffectError> {
    let adjust: Vec<String> = adjust.iter().map(|s| s.as_ref().to_string()).collect();
    if adjust.iter().any(|a| a == instrument || a == target) || instrument == target {
        return Err(EffectError::InvalidArgument(
            "instrument, target and adjustment columns must be distinct".into(),
        ));
    }
    let columns: Vec<String> = std::iter::once(instrument.to_string()).chain(adjust.iter().cloned()).collect();
    let x = table.matrix(&columns)?;
    let y = table.values(target)?;
    let (coefficient, se, crit, p_value) = match table.column(target)?.kind {
        ColumnKind::Continuous => {
            let fit = ols_fit(&x, y, Intercept::Include)?;
            let df = fit.df_residual() as f64;
            let (b, se) = (fit.coefficients[1], fit.standard_errors[1]);
            (b, se, student_t_quantile(0.975, df)?, student_t_two_sided(b / se, df)?)
        }
        ColumnKind::Binary => {
            let fit = require_converged(logistic_fit(&x, y, &LogisticOptions::default())?, "placebo model")?;
            let (b, se) = (fit.coefficients[1], fit.standard_errors[1]);
            (b, se, normal_quantile(0.975), normal_two_sided(b / se))
        }
    };
    Ok(PlaceboResult {
        instrument: instrument.to_string(),
        target: target.to_string(),
        adjust,
        coefficient,
        ci_low: coefficient - crit * se,
        ci_high: coefficient + crit * se,
        p_value,
        passed: p_value > PLACEBO_ALPHA,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Column;

    #[test]
    fn identical_instrument_fails() {
        let n = 200;
        let a: Vec<f64> = (0..n).map(|i| ((i * 37) % 101) as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v + ((v * 13.0) % 7.0) * 0.01).collect();
        let t = Table::new(vec![
            Column::complete("A", ColumnKind::Continuous, a),
            Column::complete("B", ColumnKind::Continuous, b),
        ])
        .unwrap();
        let r = placebo_instrument_test(&t, "A", "B", &[] as &[&str]).unwrap();
        assert!(!r.passed);
        assert!(r.p_value < 1e-6);
        assert!(r.ci_low > 0.0);
        assert!(placebo_instrument_test(&t, "A", "A", &[] as &[&str]).is_err());
    }
}
