//! Heterogeneous treatment effects: R- and T-learners, subgroup summaries
//! and power calculations.

pub mod rank;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DataError, Table};
use crate::effects::{binarize_at_median, CausalModelSpec, EffectError};
use crate::gboost::{fit_gbm, BoostError, BoostParams};
use crate::regress::dist::normal_quantile;
use crate::regress::{ols_fit, Intercept, RegressError};
use crate::resample::{mean, percentile, percentile_interval, resample_indices, run_replicates};
use crate::seeds::sub_seed;
use rank::{kruskal_wallis, mann_whitney_u, RankTestError};

#[derive(Debug, Error)]
pub enum CateError {
    #[error("only {retained} rows pass the residual filter; need at least {needed}")]
    TooFewRetained { retained: usize, needed: usize },
    #[error("outcome is constant in the training rows of fold {0}")]
    SingleClassFold(usize),
    #[error("{group} group has {n} rows; need at least {needed}")]
    SmallGroup { group: &'static str, n: usize, needed: usize },
    #[error("stratum `{label}` has {n} rows; need at least 2")]
    SmallStratum { label: String, n: usize },
    #[error("row {0} is included but has no stratum")]
    UnlabelledRow(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Boost(#[from] BoostError),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Effect(#[from] EffectError),
    #[error(transparent)]
    Rank(#[from] RankTestError),
}

/// Learner used for the outcome and treatment nuisance regressions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NuisanceLearner {
    Boosted(BoostParams),
    /// Ordinary least squares on the covariates.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateSet {
    Adjustment,
    AdjustmentAndPrecision,
}

impl CovariateSet {
    pub fn columns(self, spec: &CausalModelSpec) -> Vec<String> {
        match self {
            CovariateSet::Adjustment => spec.adjustment.clone(),
            CovariateSet::AdjustmentAndPrecision => spec.covariates(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RLearnerConfig {
    pub folds: usize,
    pub residual_threshold: f64,
    pub clip_percentiles: (f64, f64),
    pub nuisance: NuisanceLearner,
    pub boost: BoostParams,
    pub covariates: CovariateSet,
}

impl Default for RLearnerConfig {
    fn default() -> Self {
        RLearnerConfig {
            folds: 5,
            residual_threshold: 2.0,
            clip_percentiles: (5.0, 95.0),
            nuisance: NuisanceLearner::Boosted(BoostParams::default()),
            boost: BoostParams::default(),
            covariates: CovariateSet::AdjustmentAndPrecision,
        }
    }
}

impl RLearnerConfig {
    pub fn validate(&self) -> Result<(), CateError> {
        if self.folds < 2 {
            return Err(CateError::Config("folds must be >= 2".into()));
        }
        if !(self.residual_threshold > 0.0) {
            return Err(CateError::Config("residual_threshold must be positive".into()));
        }
        let (lo, hi) = self.clip_percentiles;
        if !(0.0 <= lo && lo < hi && hi <= 100.0) {
            return Err(CateError::Config("clip percentiles must satisfy 0 <= low < high <= 100".into()));
        }
        self.boost.validate()?;
        if let NuisanceLearner::Boosted(p) = self.nuisance {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Learner {
    R,
    T,
}

/// Per-row R-learner intermediates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RLearnerDiagnostics {
    /// Out-of-fold outcome predictions.
    pub m_hat: Vec<f64>,
    /// Out-of-fold treatment predictions.
    pub e_hat: Vec<f64>,
    /// Clipped pseudo-outcome on retained rows, `None` elsewhere.
    pub pseudo: Vec<Option<f64>>,
    pub clip_low: f64,
    pub clip_high: f64,
    pub fold: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateEstimates {
    pub learner: Learner,
    /// Per-mmHg risk change (R) or risk difference (T) for every row.
    pub tau: Vec<f64>,
    pub included: Vec<bool>,
    #[serde(skip)]
    pub diagnostics: Option<RLearnerDiagnostics>,
}

impl CateEstimates {
    pub fn n_included(&self) -> usize {
        self.included.iter().filter(|b| **b).count()
    }

    pub fn included_tau(&self) -> Vec<f64> {
        self.tau.iter().zip(&self.included).filter(|(_, k)| **k).map(|(t, _)| *t).collect()
    }
}

fn fit_predict(
    learner: NuisanceLearner,
    x: &DMatrix<f64>,
    y: &[f64],
    train: &[usize],
    test: &[usize],
) -> Result<Vec<f64>, CateError> {
    let xt = x.select_rows(train);
    let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let xq = x.select_rows(test);
    Ok(match learner {
        NuisanceLearner::Boosted(p) => fit_gbm(&xt, &yt, &p, None)?.predict(&xq)?,
        NuisanceLearner::Linear => ols_fit(&xt, &yt, Intercept::Include)?.linear_predictor(&xq)?,
    })
}

/// Fold label per row: a seeded shuffle dealt round-robin.
pub fn assign_folds(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (k, &i) in perm.iter().enumerate() {
        fold[i] = k % folds;
    }
    fold
}

/// R-learner with a continuous treatment. Outcome and treatment nuisances
/// are cross-fitted; rows with `|T − ê| > residual_threshold` form the
/// pseudo-outcome `(Y − m̂)/(T − ê)`, which is clipped to the configured
/// percentiles and regressed on the covariates by boosting with weights
/// `(T − ê)²`.
pub fn r_learner(table: &Table, spec: &CausalModelSpec, config: &RLearnerConfig, seed: u64) -> Result<CateEstimates, CateError> {
    config.validate()?;
    spec.validate()?;
    let x = table.matrix(&config.covariates.columns(spec))?;
    let t = table.values(&spec.treatment)?;
    let y = table.binary_values(&spec.outcome)?;
    let n = table.n_rows();
    if n < 10 * config.folds {
        return Err(CateError::TooFewRetained { retained: n, needed: 10 * config.folds });
    }
    let fold = assign_folds(n, config.folds, seed);

    let per_fold: Vec<Result<(Vec<usize>, Vec<f64>, Vec<f64>), CateError>> = (0..config.folds)
        .into_par_iter()
        .map(|k| {
            let train: Vec<usize> = (0..n).filter(|&i| fold[i] != k).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold[i] == k).collect();
            let first = y[train[0]];
            if train.iter().all(|&i| y[i] == first) {
                return Err(CateError::SingleClassFold(k));
            }
            let m = fit_predict(config.nuisance, &x, y, &train, &test)?;
            let e = fit_predict(config.nuisance, &x, t, &train, &test)?;
            Ok((test, m, e))
        })
        .collect();
    let mut m_hat = vec![0.0; n];
    let mut e_hat = vec![0.0; n];
    for r in per_fold {
        let (test, m, e) = r?;
        for (j, &i) in test.iter().enumerate() {
            m_hat[i] = m[j];
            e_hat[i] = e[j];
        }
    }

    let included: Vec<bool> = (0..n).map(|i| (t[i] - e_hat[i]).abs() > config.residual_threshold).collect();
    let kept: Vec<usize> = (0..n).filter(|&i| included[i]).collect();
    let needed = 10 * config.folds;
    if kept.len() < needed {
        return Err(CateError::TooFewRetained { retained: kept.len(), needed });
    }
    let raw: Vec<f64> = kept.iter().map(|&i| (y[i] - m_hat[i]) / (t[i] - e_hat[i])).collect();
    let clip_low = percentile(&raw, config.clip_percentiles.0);
    let clip_high = percentile(&raw, config.clip_percentiles.1);
    let psi: Vec<f64> = raw.iter().map(|v| v.clamp(clip_low, clip_high)).collect();
    let weights: Vec<f64> = kept.iter().map(|&i| (t[i] - e_hat[i]).powi(2)).collect();
    let model = fit_gbm(&x.select_rows(&kept), &psi, &config.boost, Some(&weights))?;
    let tau = model.predict(&x)?;

    let mut pseudo = vec![None; n];
    for (&i, v) in kept.iter().zip(&psi) {
        pseudo[i] = Some(*v);
    }
    Ok(CateEstimates {
        learner: Learner::R,
        tau,
        included,
        diagnostics: Some(RLearnerDiagnostics {
            m_hat,
            e_hat,
            pseudo,
            clip_low,
            clip_high,
            fold,
        }),
    })
}

/// Probability clip applied to T-learner outcome predictions.
pub const PROBABILITY_CLIP: (f64, f64) = (1e-4, 1.0 - 1e-4);
pub const T_LEARNER_MIN_GROUP: usize = 50;

/// T-learner for the binary contrast `treatment > median`: separate
/// boosted outcome models for treated and control rows, `tau` being the
/// difference of their clipped predictions.
pub fn t_learner(
    table: &Table,
    spec: &CausalModelSpec,
    params: &BoostParams,
    covariates: CovariateSet,
) -> Result<CateEstimates, CateError> {
    spec.validate()?;
    let x = table.matrix(&covariates.columns(spec))?;
    let (_, tb) = binarize_at_median(table.values(&spec.treatment)?);
    let y = table.binary_values(&spec.outcome)?;
    let mut preds = Vec::with_capacity(2);
    for (group, value) in [("treated", 1.0), ("control", 0.0)] {
        let rows: Vec<usize> = (0..tb.len()).filter(|&i| tb[i] == value).collect();
        if rows.len() < T_LEARNER_MIN_GROUP {
            return Err(CateError::SmallGroup { group, n: rows.len(), needed: T_LEARNER_MIN_GROUP });
        }
        let yr: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        let model = fit_gbm(&x.select_rows(&rows), &yr, params, None)?;
        let p: Vec<f64> = model
            .predict(&x)?
            .into_iter()
            .map(|v| v.clamp(PROBABILITY_CLIP.0, PROBABILITY_CLIP.1))
            .collect();
        preds.push(p);
    }
    let tau = preds[0].iter().zip(&preds[1]).map(|(a, b)| a - b).collect();
    Ok(CateEstimates {
        learner: Learner::T,
        tau,
        included: vec![true; tb.len()],
        diagnostics: None,
    })
}

/// Mutually exclusive strata over table rows; `None` leaves a row out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratification {
    pub name: String,
    pub labels: Vec<String>,
    pub assignment: Vec<Option<usize>>,
}

/// How a subgroup variable is cut into strata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SubgroupDefinition {
    /// Binary column; `labels[v]` names the stratum with value `v`.
    Binary { name: String, column: String, labels: [String; 2] },
    /// Half-open bins `[edge_k, edge_{k+1})` with open outer ends;
    /// `labels.len() == edges.len() + 1`.
    Bins { name: String, column: String, edges: Vec<f64>, labels: Vec<String> },
}

impl SubgroupDefinition {
    pub fn name(&self) -> &str {
        match self {
            SubgroupDefinition::Binary { name, .. } | SubgroupDefinition::Bins { name, .. } => name,
        }
    }

    pub fn column(&self) -> &str {
        match self {
            SubgroupDefinition::Binary { column, .. } | SubgroupDefinition::Bins { column, .. } => column,
        }
    }

    pub fn stratify(&self, table: &Table) -> Result<Stratification, CateError> {
        match self {
            SubgroupDefinition::Binary { name, column, labels } => {
                let v = table.binary_values(column)?;
                Ok(Stratification {
                    name: name.clone(),
                    labels: labels.to_vec(),
                    assignment: v.iter().map(|x| Some(*x as usize)).collect(),
                })
            }
            SubgroupDefinition::Bins { name, column, edges, labels } => {
                if labels.len() != edges.len() + 1 || edges.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(CateError::Config(format!(
                        "subgroup `{name}`: need increasing edges and one more label than edges"
                    )));
                }
                let v = table.values(column)?;
                Ok(Stratification {
                    name: name.clone(),
                    labels: labels.clone(),
                    assignment: v.iter().map(|x| Some(edges.iter().filter(|e| *x >= **e).count())).collect(),
                })
            }
        }
    }
}

/// Which rows enter the subgroup means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SubgroupRows {
    /// Rows that passed the residual filter.
    #[default]
    Included,
    /// Every row (tau is predicted for all rows).
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeterogeneityTest {
    MannWhitney,
    KruskalWallis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupSummary {
    pub label: String,
    pub n: usize,
    pub mean_tau: f64,
    /// `scale × mean_tau`.
    pub implied_arr: f64,
    /// Bootstrap interval of the implied ARR (same scale as `implied_arr`).
    pub ci_low: f64,
    pub ci_high: f64,
    pub test: Option<HeterogeneityTest>,
    /// Heterogeneity p-value across all strata (shared by every row).
    pub test_p: Option<f64>,
}

/// Per-stratum mean tau with percentile bootstrap intervals (resampling
/// within the stratum) and a rank test across strata.
pub fn subgroup_summary(
    est: &CateEstimates,
    strata: &Stratification,
    rows: SubgroupRows,
    scale: f64,
    n_boot: usize,
    seed: u64,
) -> Result<Vec<SubgroupSummary>, CateError> {
    if strata.assignment.len() != est.tau.len() {
        return Err(CateError::Config("stratification length differs from estimates".into()));
    }
    if n_boot == 0 {
        return Err(CateError::Config("n_boot must be positive".into()));
    }
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); strata.labels.len()];
    for i in 0..est.tau.len() {
        if rows == SubgroupRows::Included && !est.included[i] {
            continue;
        }
        match strata.assignment[i] {
            Some(k) if k < groups.len() => groups[k].push(est.tau[i]),
            _ => return Err(CateError::UnlabelledRow(i)),
        }
    }
    for (label, g) in strata.labels.iter().zip(&groups) {
        if g.len() < 2 {
            return Err(CateError::SmallStratum { label: label.clone(), n: g.len() });
        }
    }
    let (test, test_p) = match groups.len() {
        0 | 1 => (None, None),
        2 => (Some(HeterogeneityTest::MannWhitney), Some(mann_whitney_u(&groups[0], &groups[1])?.p_value)),
        _ => {
            let refs: Vec<&[f64]> = groups.iter().map(Vec::as_slice).collect();
            (Some(HeterogeneityTest::KruskalWallis), Some(kruskal_wallis(&refs)?.p_value))
        }
    };
    Ok(strata
        .labels
        .iter()
        .zip(&groups)
        .enumerate()
        .map(|(k, (label, g))| {
            let mean_tau = mean(g);
            let draws: Vec<f64> = run_replicates(n_boot, sub_seed(seed, k as u64), |rng| {
                let idx = resample_indices(rng, g.len());
                Some(idx.iter().map(|&i| g[i]).sum::<f64>() / g.len() as f64)
            })
            .into_iter()
            .flatten()
            .collect();
            let (lo, hi) = percentile_interval(&draws, 0.95);
            SubgroupSummary {
                label: label.clone(),
                n: g.len(),
                mean_tau,
                implied_arr: scale * mean_tau,
                ci_low: scale * lo,
                ci_high: scale * hi,
                test,
                test_p,
            }
        })
        .collect())
}

/// Smallest mean effect a one-sample z-test detects with the given power:
/// `(z_{1−α/2} + z_{power})·sd/√n`.
pub fn minimum_detectable_effect(n: usize, tau_sd: f64, power: f64, alpha: f64) -> Result<f64, CateError> {
    if n < 2 || !(tau_sd > 0.0) {
        return Err(CateError::Config("need n >= 2 and a positive tau standard deviation".into()));
    }
    if !(power > 0.0 && power < 1.0) || !(alpha > 0.0 && alpha < 1.0) {
        return Err(CateError::Config("power and alpha must lie in (0, 1)".into()));
    }
    Ok((normal_quantile(1.0 - alpha / 2.0) + normal_quantile(power)) * tau_sd / (n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mde_scaling() {
        let a = minimum_detectable_effect(100, 0.01, 0.8, 0.05).unwrap();
        let b = minimum_detectable_effect(400, 0.01, 0.8, 0.05).unwrap();
        assert!((a / b - 2.0).abs() < 1e-12);
        let half = minimum_detectable_effect(100, 0.01, 0.5, 0.05).unwrap();
        assert!((half - normal_quantile(0.975) * 0.001).abs() < 1e-15);
        assert!(minimum_detectable_effect(1, 0.01, 0.8, 0.05).is_err());
        assert!(minimum_detectable_effect(10, 0.01, 1.0, 0.05).is_err());
    }

    #[test]
    fn folds_are_balanced() {
        let f = assign_folds(103, 5, 7);
        let mut counts = [0; 5];
        for k in &f {
            counts[*k] += 1;
        }
        assert!(counts.iter().all(|c| *c == 20 || *c == 21));
        assert_eq!(f, assign_folds(103, 5, 7));
    }

    fn est(tau: Vec<f64>) -> CateEstimates {
        let n = tau.len();
        CateEstimates { learner: Learner::R, tau, included: vec![true; n], diagnostics: None }
    }

    #[test]
    fn single_stratum_has_no_test() {
        let e = est(vec![0.1, 0.2, 0.3]);
        let s = Stratification { name: "all".into(), labels: vec!["all".into()], assignment: vec![Some(0); 3] };
        let rows = subgroup_summary(&e, &s, SubgroupRows::Included, 20.0, 50, 1).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].test_p.is_none());
        assert_eq!(rows[0].implied_arr, 20.0 * rows[0].mean_tau);
    }

    #[test]
    fn bins_are_half_open() {
        let t = Table::new(vec![crate::dataset::Column::complete(
            "AGE",
            crate::dataset::ColumnKind::Continuous,
            vec![30.0, 45.0, 54.9, 55.0, 70.0],
        )])
        .unwrap();
        let def = SubgroupDefinition::Bins {
            name: "age".into(),
            column: "AGE".into(),
            edges: vec![45.0, 55.0, 65.0],
            labels: vec!["<45".into(), "45-54".into(), "55-64".into(), ">=65".into()],
        };
        let s = def.stratify(&t).unwrap();
        assert_eq!(s.assignment, vec![Some(0), Some(1), Some(1), Some(2), Some(3)]);
    }

    #[test]
    fn small_stratum_rejected() {
        let e = est(vec![0.1, 0.2, 0.3]);
        let s = Stratification {
            name: "x".into(),
            labels: vec!["a".into(), "b".into()],
            assignment: vec![Some(0), Some(0), Some(1)],
        };
        assert!(matches!(
            subgroup_summary(&e, &s, SubgroupRows::Included, 20.0, 50, 1),
            Err(CateError::SmallStratum { .. })
        ));
    }
}
