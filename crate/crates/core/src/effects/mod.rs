//! Average causal effects: g-computation with bootstrap intervals, naive
//! and mean-covariate contrasts, propensity score matching and stabilized
//! inverse probability weighting.

mod ipw;
mod psm;

pub use ipw::{ipw_ate, IpwOptions, IpwResult, WeightSummary};
pub use psm::{psm_att, BalanceRow, MatchResult, PsmOptions};

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{BackdoorViolation, Dag, DagError};
use crate::dataset::{DataError, Table};
use crate::regress::{logistic_fit, sigmoid, FitDiagnostic, FitResult, LogisticOptions, RegressError};
use crate::resample::{percentile_interval, resample_indices, run_replicates};

#[derive(Debug, Error)]
pub enum EffectError {
    #[error("invalid model specification: {0}")]
    Spec(String),
    #[error("adjustment set fails the back-door criterion: {}", join(.0))]
    NotIdentified(Vec<BackdoorViolation>),
    #[error("{what} did not converge{}", .diagnostic.as_ref().map(|d| format!(" ({d:?})")).unwrap_or_default())]
    NotConverged { what: String, diagnostic: Option<FitDiagnostic> },
    #[error("{failed} of {total} bootstrap resamples failed (limit 1%)")]
    BootstrapFailures { failed: usize, total: usize },
    #[error("stratum {stratum} = {value} has no {group} rows")]
    EmptyStratum { stratum: String, value: f64, group: &'static str },
    #[error("no treated unit found a control within the caliper")]
    NoPairs,
    #[error("positivity violated: propensity scores within 1e-6 of 0 or 1 at rows {rows:?}")]
    Positivity { rows: Vec<usize> },
    #[error("no rows with treatment within ±{half_width} of {s}")]
    EmptyBand { s: f64, half_width: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Regress(#[from] RegressError),
}

fn join(v: &[BackdoorViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Treatment, outcome, back-door adjustment set and outcome-model-only
/// precision covariates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalModelSpec {
    pub treatment: String,
    pub outcome: String,
    pub adjustment: Vec<String>,
    #[serde(default)]
    pub precision: Vec<String>,
}

impl CausalModelSpec {
    pub fn new<S: Into<String>>(treatment: S, outcome: S, adjustment: &[&str], precision: &[&str]) -> Self {
        CausalModelSpec {
            treatment: treatment.into(),
            outcome: outcome.into(),
            adjustment: adjustment.iter().map(|s| s.to_string()).collect(),
            precision: precision.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Structural checks that need no graph.
    pub fn validate(&self) -> Result<(), EffectError> {
        if self.treatment == self.outcome {
            return Err(EffectError::Spec("treatment and outcome coincide".into()));
        }
        let mut seen = BTreeSet::new();
        for v in self.adjustment.iter().chain(&self.precision) {
            if v == &self.treatment || v == &self.outcome {
                return Err(EffectError::Spec(format!("`{v}` cannot be a covariate")));
            }
            if !seen.insert(v) {
                return Err(EffectError::Spec(format!("`{v}` listed twice among covariates")));
            }
        }
        Ok(())
    }

    /// Checks identification against the graph: the adjustment set must
    /// satisfy the back-door criterion, and adding the precision
    /// covariates must neither introduce a descendant of the treatment nor
    /// open a back-door path.
    pub fn identify(&self, dag: &Dag) -> Result<(), EffectError> {
        self.validate()?;
        let verdict = dag.is_valid_backdoor(&self.treatment, &self.outcome, &self.adjustment)?;
        if !verdict.valid {
            return Err(EffectError::NotIdentified(verdict.violations));
        }
        if !self.precision.is_empty() {
            let verdict = dag.is_valid_backdoor(&self.treatment, &self.outcome, self.covariates())?;
            if !verdict.valid {
                return Err(EffectError::NotIdentified(verdict.violations));
            }
        }
        Ok(())
    }

    /// Adjustment followed by precision covariates.
    pub fn covariates(&self) -> Vec<String> {
        self.adjustment.iter().chain(&self.precision).cloned().collect()
    }

    /// Outcome-model design columns: treatment first, then covariates.
    pub fn outcome_columns(&self) -> Vec<String> {
        std::iter::once(self.treatment.clone()).chain(self.covariates()).collect()
    }
}

pub(crate) fn require_converged(fit: FitResult, what: &str) -> Result<FitResult, EffectError> {
    if fit.converged && fit.diagnostic.is_none() {
        Ok(fit)
    } else {
        Err(EffectError::NotConverged {
            what: what.to_string(),
            diagnostic: fit.diagnostic,
        })
    }
}

/// Logistic outcome model `logit P(Y=1) = β₀ + β_T·T + Σ β_j·Z_j` with the
/// covariate part of the linear predictor cached per row.
#[derive(Debug, Clone)]
pub struct OutcomeModel {
    pub fit: FitResult,
    offsets: Vec<f64>,
    covariate_means: Vec<f64>,
}

impl OutcomeModel {
    pub fn fit(table: &Table, spec: &CausalModelSpec) -> Result<Self, EffectError> {
        spec.validate()?;
        let x = table.matrix(&spec.outcome_columns())?;
        let y = table.binary_values(&spec.outcome)?;
        let fit = require_converged(logistic_fit(&x, y, &LogisticOptions::default())?, "outcome model")?;
        Ok(Self::from_fit(fit, &x))
    }

    fn from_fit(fit: FitResult, x: &DMatrix<f64>) -> Self {
        let b = &fit.coefficients;
        let offsets = (0..x.nrows())
            .map(|i| b[0] + (1..x.ncols()).map(|j| b[j + 1] * x[(i, j)]).sum::<f64>())
            .collect();
        let covariate_means = (1..x.ncols()).map(|j| x.column(j).mean()).collect();
        OutcomeModel {
            fit,
            offsets,
            covariate_means,
        }
    }

    pub fn treatment_coefficient(&self) -> f64 {
        self.fit.coefficients[1]
    }

    /// Mean predicted risk with the treatment set to `s` for every row.
    pub fn interventional_risk(&self, s: f64) -> f64 {
        let bt = self.treatment_coefficient();
        self.offsets.iter().map(|o| sigmoid(o + bt * s)).sum::<f64>() / self.offsets.len() as f64
    }

    /// Predicted risk at treatment `s` with covariates at their means.
    pub fn risk_at_mean_covariates(&self, s: f64) -> f64 {
        let b = &self.fit.coefficients;
        let eta = b[0] + b[1] * s + self.covariate_means.iter().enumerate().map(|(j, m)| b[j + 2] * m).sum::<f64>();
        sigmoid(eta)
    }
}

/// `E[Y | do(T = s)]` by standardization over the empirical covariate
/// distribution.
pub fn gcomp_interventional_risk(table: &Table, spec: &CausalModelSpec, s: f64) -> Result<f64, EffectError> {
    Ok(OutcomeModel::fit(table, spec)?.interventional_risk(s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DosePoint {
    pub s: f64,
    pub risk: f64,
}

pub fn dose_response_curve(table: &Table, spec: &CausalModelSpec, grid: &[f64]) -> Result<Vec<DosePoint>, EffectError> {
    if grid.is_empty() {
        return Err(EffectError::InvalidArgument("empty intervention grid".into()));
    }
    let model = OutcomeModel::fit(table, spec)?;
    Ok(grid
        .iter()
        .map(|&s| DosePoint {
            s,
            risk: model.interventional_risk(s),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AceResult {
    pub s1: f64,
    pub s0: f64,
    pub risk_high: f64,
    pub risk_low: f64,
    pub ace: f64,
    /// `ace / risk_high`.
    pub rrr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_bootstrap: usize,
    pub n_failed: usize,
    pub seed: u64,
}

pub const MIN_BOOTSTRAP: usize = 100;

/// Aborts when more than 1% of replicates failed; otherwise returns the
/// successful ones in replicate order.
pub(crate) fn collect_replicates<T>(results: Vec<Option<T>>) -> Result<(Vec<T>, usize), EffectError> {
    let total = results.len();
    let ok: Vec<T> = results.into_iter().flatten().collect();
    let failed = total - ok.len();
    if failed * 100 > total {
        return Err(EffectError::BootstrapFailures { failed, total });
    }
    Ok((ok, failed))
}

/// G-computation contrasts sharing one set of bootstrap resamples: every
/// resample refits the outcome model once and evaluates all contrasts.
pub fn gcomp_contrasts(
    table: &Table,
    spec: &CausalModelSpec,
    contrasts: &[(f64, f64)],
    n_boot: usize,
    seed: u64,
) -> Result<Vec<AceResult>, EffectError> {
    if n_boot < MIN_BOOTSTRAP {
        return Err(EffectError::InvalidArgument(format!("n_boot must be at least {MIN_BOOTSTRAP}")));
    }
    let model = OutcomeModel::fit(table, spec)?;
    let n = table.n_rows();
    let x = table.matrix(&spec.outcome_columns())?;
    let y = table.binary_values(&spec.outcome)?;
    let replicates = run_replicates(n_boot, seed, |rng| {
        let rows = resample_indices(rng, n);
        let xb = x.select_rows(&rows);
        let yb: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        let fit = logistic_fit(&xb, &yb, &LogisticOptions::default()).ok()?;
        let fit = require_converged(fit, "bootstrap outcome model").ok()?;
        let m = OutcomeModel::from_fit(fit, &xb);
        Some(
            contrasts
                .iter()
                .map(|&(s1, s0)| m.interventional_risk(s1) - m.interventional_risk(s0))
                .collect::<Vec<f64>>(),
        )
    });
    let (ok, n_failed) = collect_replicates(replicates)?;
    Ok(contrasts
        .iter()
        .enumerate()
        .map(|(k, &(s1, s0))| {
            let risk_high = model.interventional_risk(s1);
            let risk_low = model.interventional_risk(s0);
            let ace = risk_high - risk_low;
            let draws: Vec<f64> = ok.iter().map(|r| r[k]).collect();
            let (ci_low, ci_high) = percentile_interval(&draws, 0.95);
            AceResult {
                s1,
                s0,
                risk_high,
                risk_low,
                ace,
                rrr: ace / risk_high,
                ci_low,
                ci_high,
                n_bootstrap: n_boot,
                n_failed,
                seed,
            }
        })
        .collect())
}

/// ACE of `do(T = s1)` versus `do(T = s0)` with a percentile bootstrap
/// interval over full refits on row resamples.
pub fn gcomp_ace(
    table: &Table,
    spec: &CausalModelSpec,
    s1: f64,
    s0: f64,
    n_boot: usize,
    seed: u64,
) -> Result<AceResult, EffectError> {
    Ok(gcomp_contrasts(table, spec, &[(s1, s0)], n_boot, seed)?.remove(0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum NaiveMethod {
    /// Unadjusted logistic regression of outcome on treatment.
    #[default]
    Model,
    /// Empirical outcome rates among rows with treatment within
    /// `half_width` of each contrast value.
    Band { half_width: f64 },
}

/// Confounded observational risk difference between treatment levels.
pub fn naive_contrast(
    table: &Table,
    treatment: &str,
    outcome: &str,
    s1: f64,
    s0: f64,
    method: NaiveMethod,
) -> Result<f64, EffectError> {
    let t = table.values(treatment)?;
    let y = table.binary_values(outcome)?;
    match method {
        NaiveMethod::Model => {
            let x = DMatrix::from_column_slice(t.len(), 1, t);
            let fit = require_converged(logistic_fit(&x, y, &LogisticOptions::default())?, "naive model")?;
            let b = &fit.coefficients;
            Ok(sigmoid(b[0] + b[1] * s1) - sigmoid(b[0] + b[1] * s0))
        }
        NaiveMethod::Band { half_width } => {
            if !(half_width > 0.0) {
                return Err(EffectError::InvalidArgument("band half-width must be positive".into()));
            }
            let rate = |s: f64| {
                let (mut k, mut m) = (0.0, 0usize);
                for (ti, yi) in t.iter().zip(y) {
                    if (ti - s).abs() <= half_width {
                        k += yi;
                        m += 1;
                    }
                }
                if m == 0 {
                    Err(EffectError::EmptyBand { s, half_width })
                } else {
                    Ok(k / m as f64)
                }
            };
            Ok(rate(s1)? - rate(s0)?)
        }
    }
}

/// Risk difference predicted at the covariate means (no marginalization).
pub fn mean_z_plugin(table: &Table, spec: &CausalModelSpec, s1: f64, s0: f64) -> Result<f64, EffectError> {
    let m = OutcomeModel::fit(table, spec)?;
    Ok(m.risk_at_mean_covariates(s1) - m.risk_at_mean_covariates(s0))
}

/// Logistic propensity scores `P(T = 1 | Z)`; with `z` empty every score
/// equals the treated fraction.
pub fn estimate_propensity<S: AsRef<str>>(table: &Table, z: &[S], treatment_binary: &str) -> Result<Vec<f64>, EffectError> {
    let t = table.binary_values(treatment_binary)?;
    let x = table.matrix(z)?;
    propensity_from(&x, t)
}

pub(crate) fn propensity_from(x: &DMatrix<f64>, t: &[f64]) -> Result<Vec<f64>, EffectError> {
    let fit = require_converged(logistic_fit(x, t, &LogisticOptions::default())?, "propensity model")?;
    Ok(fit.linear_predictor(x)?.into_iter().map(sigmoid).collect())
}

/// Median (mean of the two middle values for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Indicator of `value > median(values)` and the median used.
pub fn binarize_at_median(values: &[f64]) -> (f64, Vec<f64>) {
    let m = median(values);
    (m, values.iter().map(|v| if *v > m { 1.0 } else { 0.0 }).collect())
}
