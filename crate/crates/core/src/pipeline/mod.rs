//! Batch analysis: load, identify, estimate, refute and report.
//!
//! Stages run in a fixed order and each draws its randomness from
//! `derive_seed(master, stage label)`, so a single stage can be re-run in
//! isolation and reproduce the numbers of a full run.

pub mod cache;
pub mod config;
pub mod metrics;
mod tables;

use std::fmt;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    BootstrapCounts, Contrast, DagTestConfig, DataSource, ImplicationSpec, MissingMode, PipelineConfig, PlaceboSpec,
    CONFIG_SCHEMA_VERSION,
};
pub use tables::write_tables;

use crate::cate::rank::{spearman, RankTestError};
use crate::cate::{minimum_detectable_effect, r_learner, subgroup_summary, t_learner, CateError, SubgroupRows, SubgroupSummary};
use crate::dag::{parse_dag, Dag, DagError};
use crate::dataset::{
    complete_cases, impute_iterative, load_table, mcar_test, summarize_baseline, BaselineRow, DataError, McarResult, Table,
};
use crate::effects::{
    dose_response_curve, gcomp_ace, ipw_ate, mean_z_plugin, naive_contrast, psm_att, require_converged, AceResult,
    DosePoint, EffectError, IpwOptions, IpwResult, MatchResult, NaiveMethod, OutcomeModel, PsmOptions,
};
use crate::refute::{permutation_refute, placebo_instrument_test, PermutationResult, PlaceboResult};
use crate::regress::dist::normal_two_sided;
use crate::regress::{logistic_fit, partial_correlation, predict_proba, sigmoid, wald_interval, LogisticOptions, RegressError};
use crate::resample::{mean, percentile, sample_sd};
use crate::seeds::derive_seed;
use crate::sensitivity::{causal_risk_ratio, e_value, e_value_table, EvalueRow, SensitivityError};
use crate::synth::{generate, ScmError};

/// Identifies the producing software in report metadata.
pub const PROVENANCE: &str = concat!("docausal ", env!("CARGO_PKG_VERSION"));

/// Folds of the stratified cross-validation of the observational model.
pub const OBSERVATIONAL_FOLDS: usize = 5;

/// Power at which subgroup minimum detectable effects are reported.
pub const MDE_POWER: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Identify,
    Impute,
    Baseline,
    DagTests,
    ObservationalModel,
    Ace,
    Triangulation,
    Refutation,
    Cate,
    Sensitivity,
    Output,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Identify => "identify",
            Stage::Impute => "impute",
            Stage::Baseline => "baseline",
            Stage::DagTests => "dag_tests",
            Stage::ObservationalModel => "observational_model",
            Stage::Ace => "ace",
            Stage::Triangulation => "triangulation",
            Stage::Refutation => "refutation",
            Stage::Cate => "cate",
            Stage::Sensitivity => "sensitivity",
            Stage::Output => "output",
        }
    }

    /// Seed for this stage under the given master seed.
    pub fn seed(self, master: u64) -> u64 {
        derive_seed(master, self.label())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Effect(#[from] EffectError),
    #[error(transparent)]
    Cate(#[from] CateError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Rank(#[from] RankTestError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: StageError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration, unreadable inputs, malformed graph or an
    /// unidentified effect.
    Validation,
    /// Failure while estimating.
    Computation,
}

impl PipelineError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            PipelineError::Config(_) => ErrorKind::Validation,
            PipelineError::Stage {
                stage: Stage::Load | Stage::Identify,
                ..
            } => ErrorKind::Validation,
            PipelineError::Stage { .. } => ErrorKind::Computation,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            PipelineError::Config(_) => None,
        }
    }
}

/// Tags an error with the stage that produced it.
pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<StageError>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::Stage {
            stage,
            source: e.into(),
        })
    }
}

fn invalid(stage: Stage, msg: impl Into<String>) -> PipelineError {
    PipelineError::Stage {
        stage,
        source: StageError::Invalid(msg.into()),
    }
}

/// Graph from `dag_path`, or the SCM's own graph for synthetic data.
pub fn load_dag(cfg: &PipelineConfig) -> Result<Dag, PipelineError> {
    match (&cfg.dag_path, &cfg.data) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).at(Stage::Identify)?;
            parse_dag(&text).at(Stage::Identify)
        }
        (None, DataSource::Synthetic { scm, .. }) => scm.to_dag().at(Stage::Identify),
        (None, DataSource::Csv { .. }) => Err(PipelineError::Config("dag_path is required for CSV data".into())),
    }
}

/// Raw cohort table, missing cells included.
pub fn load_data(cfg: &PipelineConfig) -> Result<Table, PipelineError> {
    match &cfg.data {
        DataSource::Csv { path, schema } => load_table(path, schema).at(Stage::Load),
        DataSource::Synthetic { scm, n, seed } => {
            generate(scm, *n, seed.unwrap_or_else(|| derive_seed(cfg.seed, "data"))).at(Stage::Load)
        }
    }
}

/// Applies the configured missing-data handling.
pub fn analysis_table(cfg: &PipelineConfig, raw: &Table) -> Result<Table, PipelineError> {
    let table = match cfg.missing {
        MissingMode::Impute if raw.is_complete() => raw.clone(),
        MissingMode::Impute => impute_iterative(raw, cfg.impute_iterations).at(Stage::Impute)?,
        MissingMode::CompleteCase => complete_cases(raw),
    };
    if table.n_rows() == 0 {
        return Err(invalid(Stage::Impute, "no rows left for analysis"));
    }
    Ok(table)
}

/// Inputs shared by every estimation stage.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dag: Dag,
    pub raw: Table,
    pub analysis: Table,
    /// Primary contrast `do(T = s1)` versus `do(T = s0)`.
    pub s1: f64,
    pub s0: f64,
}

impl Prepared {
    pub fn new(cfg: &PipelineConfig, dag: Dag, raw: Table, analysis: Table) -> Result<Self, PipelineError> {
        let t = analysis.values(&cfg.spec.treatment).at(Stage::Impute)?;
        let s1 = cfg.contrast.high.unwrap_or_else(|| mean(t));
        Ok(Prepared {
            dag,
            raw,
            analysis,
            s1,
            s0: s1 - cfg.contrast.delta,
        })
    }
}

/// Validates the configuration, checks identification against the graph,
/// then loads and prepares the data.
pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared, PipelineError> {
    cfg.validate()?;
    let dag = load_dag(cfg)?;
    cfg.spec.identify(&dag).at(Stage::Identify)?;
    let raw = load_data(cfg)?;
    let analysis = analysis_table(cfg, &raw)?;
    Prepared::new(cfg, dag, raw, analysis)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingSummary {
    pub variable: String,
    pub n_missing: usize,
    /// Missingness versus the outcome.
    pub mcar: McarResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSection {
    pub n_rows: usize,
    pub n_complete_cases: usize,
    pub n_complete_case_events: usize,
    pub n_analysis: usize,
    pub n_analysis_events: usize,
    pub missing: Vec<MissingSummary>,
    /// Complete cases grouped by outcome.
    pub rows: Vec<BaselineRow>,
}

fn events(table: &Table, outcome: &str) -> Result<usize, DataError> {
    Ok(table.binary_values(outcome)?.iter().filter(|v| **v == 1.0).count())
}

pub fn baseline(cfg: &PipelineConfig, p: &Prepared) -> Result<BaselineSection, PipelineError> {
    let stage = Stage::Baseline;
    let outcome = &cfg.spec.outcome;
    let complete = complete_cases(&p.raw);
    let mut missing = Vec::new();
    for col in p.raw.columns() {
        if col.n_missing() > 0 {
            missing.push(MissingSummary {
                variable: col.name.clone(),
                n_missing: col.n_missing(),
                mcar: mcar_test(&p.raw, &col.name, outcome).at(stage)?,
            });
        }
    }
    let rows = if complete.n_rows() > 0 {
        summarize_baseline(&complete, outcome, &cfg.baseline_variables).at(stage)?
    } else {
        Vec::new()
    };
    Ok(BaselineSection {
        n_rows: p.raw.n_rows(),
        n_complete_cases: complete.n_rows(),
        n_complete_case_events: if complete.n_rows() > 0 { events(&complete, outcome).at(stage)? } else { 0 },
        n_analysis: p.analysis.n_rows(),
        n_analysis_events: events(&p.analysis, outcome).at(stage)?,
        missing,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplicationTest {
    pub x: String,
    pub y: String,
    pub cond: Vec<String>,
    /// Whether the graph implies `x ⊥ y | cond`.
    pub d_separated: bool,
    pub expect_dependent: bool,
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
    /// Independence not rejected (`p > alpha`).
    pub independent: bool,
    /// The verdict matches what the graph predicts.
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedImplication {
    pub x: String,
    pub y: String,
    pub cond: Vec<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagTestsSection {
    pub alpha: f64,
    /// Implications were generated from the graph rather than listed.
    pub generated: bool,
    pub tests: Vec<ImplicationTest>,
    pub skipped: Vec<SkippedImplication>,
    pub n_consistent: usize,
}

/// The implications a run tests: the configured list, or the graph's
/// parents-union implications when the list is empty.
pub fn implication_list(cfg: &PipelineConfig, dag: &Dag) -> (Vec<ImplicationSpec>, bool) {
    if cfg.dag_tests.implications.is_empty() {
        let list = dag
            .testable_implications(cfg.dag_tests.max_cond_size)
            .into_iter()
            .map(|i| ImplicationSpec {
                x: i.x,
                y: i.y,
                cond: i.cond.into_iter().collect(),
                expect_dependent: false,
            })
            .collect();
        (list, true)
    } else {
        (cfg.dag_tests.implications.clone(), false)
    }
}

pub fn dag_tests(cfg: &PipelineConfig, p: &Prepared) -> Result<DagTestsSection, PipelineError> {
    let stage = Stage::DagTests;
    let (list, generated) = implication_list(cfg, &p.dag);
    let mut tests = Vec::new();
    let mut skipped = Vec::new();
    for imp in list {
        let absent: Vec<&String> = std::iter::once(&imp.x)
            .chain([&imp.y])
            .chain(&imp.cond)
            .filter(|c| p.analysis.column(c).is_err())
            .collect();
        if !absent.is_empty() {
            let reason = format!("not in data: {}", absent.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "));
            skipped.push(SkippedImplication {
                x: imp.x,
                y: imp.y,
                cond: imp.cond,
                reason,
            });
            continue;
        }
        let d_separated = p.dag.d_separated(&imp.x, &imp.y, &imp.cond).at(stage)?;
        let x = p.analysis.values(&imp.x).at(stage)?;
        let y = p.analysis.values(&imp.y).at(stage)?;
        let z = p.analysis.matrix(&imp.cond).at(stage)?;
        let pc = partial_correlation(x, y, &z).at(stage)?;
        let independent = pc.p_value > cfg.alpha;
        tests.push(ImplicationTest {
            d_separated,
            consistent: independent != imp.expect_dependent,
            x: imp.x,
            y: imp.y,
            cond: imp.cond,
            expect_dependent: imp.expect_dependent,
            r: pc.r,
            p_value: pc.p_value,
            n: pc.n,
            independent,
        });
    }
    Ok(DagTestsSection {
        alpha: cfg.alpha,
        generated,
        n_consistent: tests.iter().filter(|t| t.consistent).count(),
        tests,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddsRatioRow {
    pub variable: String,
    pub coefficient: f64,
    pub std_error: f64,
    pub odds_ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationalSection {
    pub n: usize,
    pub rows: Vec<OddsRatioRow>,
    /// In-sample discrimination and calibration.
    pub auroc: f64,
    pub average_precision: f64,
    pub brier: f64,
    /// Held-out AUROC per stratified fold.
    pub cv_auroc: Vec<f64>,
    pub cv_auroc_mean: f64,
    /// Population standard deviation over folds.
    pub cv_auroc_sd: f64,
    pub cv_average_precision_mean: f64,
    pub cv_brier_mean: f64,
}

fn population_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Associational logistic model of the outcome on the configured
/// predictors. `None` when no predictors are configured.
pub fn observational_model(cfg: &PipelineConfig, p: &Prepared) -> Result<Option<ObservationalSection>, PipelineError> {
    let stage = Stage::ObservationalModel;
    let predictors = &cfg.observational_predictors;
    if predictors.is_empty() {
        return Ok(None);
    }
    let x = p.analysis.matrix(predictors).at(stage)?;
    let y = p.analysis.binary_values(&cfg.spec.outcome).at(stage)?;
    let opts = LogisticOptions::default();
    let fit = require_converged(logistic_fit(&x, y, &opts).at(stage)?, "observational model").at(stage)?;
    let rows = predictors
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let (b, se) = (fit.coefficients[j + 1], fit.standard_errors[j + 1]);
            let (lo, hi) = wald_interval(&fit, j + 1, 0.95);
            OddsRatioRow {
                variable: name.clone(),
                coefficient: b,
                std_error: se,
                odds_ratio: b.exp(),
                ci_low: lo.exp(),
                ci_high: hi.exp(),
                p_value: normal_two_sided(b / se),
            }
        })
        .collect();
    let prob = predict_proba(&fit, &x).at(stage)?;
    let one_class = || invalid(stage, "outcome has a single class");
    let auroc = metrics::auroc(y, &prob).ok_or_else(one_class)?;
    let average_precision = metrics::average_precision(y, &prob).ok_or_else(one_class)?;

    let folds = metrics::stratified_folds(y, OBSERVATIONAL_FOLDS, stage.seed(cfg.seed));
    let (mut cv_auroc, mut cv_ap, mut cv_brier) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..OBSERVATIONAL_FOLDS {
        let train: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != k).collect();
        let test: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == k).collect();
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let yq: Vec<f64> = test.iter().map(|&i| y[i]).collect();
        let f = require_converged(logistic_fit(&x.select_rows(&train), &yt, &opts).at(stage)?, "cross-validation fold")
            .at(stage)?;
        let pq = predict_proba(&f, &x.select_rows(&test)).at(stage)?;
        cv_auroc.push(metrics::auroc(&yq, &pq).ok_or_else(one_class)?);
        cv_ap.push(metrics::average_precision(&yq, &pq).ok_or_else(one_class)?);
        cv_brier.push(metrics::brier(&yq, &pq));
    }
    Ok(Some(ObservationalSection {
        n: y.len(),
        rows,
        auroc,
        average_precision,
        brier: metrics::brier(y, &prob),
        cv_auroc_mean: mean(&cv_auroc),
        cv_auroc_sd: population_sd(&cv_auroc),
        cv_average_precision_mean: mean(&cv_ap),
        cv_brier_mean: mean(&cv_brier),
        cv_auroc,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AceSection {
    pub contrast: AceResult,
    /// `risk_high / risk_low`.
    pub risk_ratio: f64,
    pub dose_response: Vec<DosePoint>,
}

pub fn ace(cfg: &PipelineConfig, p: &Prepared) -> Result<AceSection, PipelineError> {
    let stage = Stage::Ace;
    let contrast = gcomp_ace(&p.analysis, &cfg.spec, p.s1, p.s0, cfg.bootstrap.gcomp, stage.seed(cfg.seed)).at(stage)?;
    Ok(AceSection {
        risk_ratio: contrast.risk_high / contrast.risk_low,
        dose_response: dose_response_curve(&p.analysis, &cfg.spec, &cfg.dose_grid).at(stage)?,
        contrast,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangulationSection {
    /// Unadjusted logistic contrast.
    pub naive_model: f64,
    /// Empirical rates near each contrast value; `None` when a band is
    /// empty.
    pub naive_band: Option<f64>,
    pub naive_band_half_width: f64,
    /// `naive_model / ace − 1`.
    pub naive_relative_inflation: f64,
    /// Unadjusted over adjusted treatment log-odds coefficient, minus 1.
    pub log_odds_inflation: f64,
    pub mean_z_plugin: f64,
    /// Unadjusted model risk over the dose grid.
    pub observational_curve: Vec<DosePoint>,
    pub psm: MatchResult,
    pub ipw: IpwResult,
}

pub fn triangulation(cfg: &PipelineConfig, p: &Prepared, ace: &AceResult) -> Result<TriangulationSection, PipelineError> {
    let stage = Stage::Triangulation;
    let (t, y) = (&cfg.spec.treatment, &cfg.spec.outcome);
    let naive_model = naive_contrast(&p.analysis, t, y, p.s1, p.s0, NaiveMethod::Model).at(stage)?;
    let band = NaiveMethod::Band {
        half_width: cfg.naive_band_half_width,
    };
    let naive_band = match naive_contrast(&p.analysis, t, y, p.s1, p.s0, band) {
        Ok(v) => Some(v),
        Err(EffectError::EmptyBand { .. }) => None,
        Err(e) => return Err(e).at(stage),
    };
    let tv = p.analysis.values(t).at(stage)?;
    let xt = DMatrix::from_column_slice(tv.len(), 1, tv);
    let yv = p.analysis.binary_values(y).at(stage)?;
    let unadjusted =
        require_converged(logistic_fit(&xt, yv, &LogisticOptions::default()).at(stage)?, "naive model").at(stage)?;
    let adjusted = OutcomeModel::fit(&p.analysis, &cfg.spec).at(stage)?;
    let b = &unadjusted.coefficients;
    let observational_curve = cfg
        .dose_grid
        .iter()
        .map(|&s| DosePoint {
            s,
            risk: sigmoid(b[0] + b[1] * s),
        })
        .collect();

    let seed = stage.seed(cfg.seed);
    let psm_opts = PsmOptions {
        caliper: cfg.caliper,
        stratum: cfg.match_stratum.clone(),
        n_boot: cfg.bootstrap.psm,
    };
    let psm = psm_att(&p.analysis, &cfg.spec, &psm_opts, derive_seed(seed, "psm")).at(stage)?;
    let ipw_opts = IpwOptions {
        trim_percentile: cfg.trim_percentile,
        n_boot: cfg.bootstrap.ipw,
    };
    let ipw = ipw_ate(&p.analysis, &cfg.spec, &ipw_opts, derive_seed(seed, "ipw")).at(stage)?;
    Ok(TriangulationSection {
        naive_model,
        naive_band,
        naive_band_half_width: cfg.naive_band_half_width,
        naive_relative_inflation: naive_model / ace.ace - 1.0,
        log_odds_inflation: b[1] / adjusted.treatment_coefficient() - 1.0,
        mean_z_plugin: mean_z_plugin(&p.analysis, &cfg.spec, p.s1, p.s0).at(stage)?,
        observational_curve,
        psm,
        ipw,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboOutcome {
    pub test: PlaceboResult,
    /// Expected to fail; excluded from `placebos_passed`.
    pub pre_specified_invalid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefutationSection {
    pub permutation: PermutationResult,
    pub placebos: Vec<PlaceboOutcome>,
    /// Every placebo not marked pre-specified invalid passed.
    pub placebos_passed: bool,
}

pub fn refutation(cfg: &PipelineConfig, p: &Prepared) -> Result<RefutationSection, PipelineError> {
    let stage = Stage::Refutation;
    let permutation =
        permutation_refute(&p.analysis, &cfg.spec, p.s1, p.s0, cfg.permutations, stage.seed(cfg.seed)).at(stage)?;
    let mut placebos = Vec::new();
    for pl in &cfg.placebos {
        placebos.push(PlaceboOutcome {
            test: placebo_instrument_test(&p.analysis, &pl.instrument, &pl.target, &pl.adjust).at(stage)?,
            pre_specified_invalid: pl.pre_specified_invalid,
        });
    }
    Ok(RefutationSection {
        permutation,
        placebos_passed: placebos.iter().all(|o| o.pre_specified_invalid || o.test.passed),
        placebos,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub p05: f64,
    pub p95: f64,
}

impl TauSummary {
    fn of(tau: &[f64]) -> Self {
        TauSummary {
            n: tau.len(),
            mean: mean(tau),
            sd: sample_sd(tau),
            median: percentile(tau, 50.0),
            p05: percentile(tau, 5.0),
            p95: percentile(tau, 95.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupStratum {
    pub summary: SubgroupSummary,
    pub tau_sd: f64,
    /// Per-unit minimum detectable mean effect at `MDE_POWER`; `None` when
    /// tau is constant in the stratum.
    pub mde: Option<f64>,
    /// `mde > |mean_tau|`.
    pub underpowered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupTable {
    pub name: String,
    pub column: String,
    pub strata: Vec<SubgroupStratum>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateSection {
    /// R-learner tau over rows passing the residual filter.
    pub r_learner: TauSummary,
    pub n_excluded: usize,
    pub clip_low: f64,
    pub clip_high: f64,
    /// `arr_scale × mean tau`.
    pub implied_arr: f64,
    /// T-learner risk differences over all rows.
    pub t_learner: TauSummary,
    /// Rank correlation of R- and T-learner estimates on included rows.
    pub spearman_r_t: f64,
    pub subgroup_rows: SubgroupRows,
    pub subgroups: Vec<SubgroupTable>,
}

pub fn cate(cfg: &PipelineConfig, p: &Prepared) -> Result<CateSection, PipelineError> {
    let stage = Stage::Cate;
    let seed = stage.seed(cfg.seed);
    let r = r_learner(&p.analysis, &cfg.spec, &cfg.rlearner, derive_seed(seed, "r_learner")).at(stage)?;
    let t = t_learner(&p.analysis, &cfg.spec, &cfg.rlearner.boost, cfg.rlearner.covariates).at(stage)?;
    let included = r.included_tau();
    let t_included: Vec<f64> = t.tau.iter().zip(&r.included).filter(|(_, k)| **k).map(|(v, _)| *v).collect();
    let diag = r.diagnostics.as_ref().expect("r-learner diagnostics");
    let (clip_low, clip_high) = (diag.clip_low, diag.clip_high);

    let mut subgroups = Vec::new();
    for (k, def) in cfg.subgroups.iter().enumerate() {
        let strata = def.stratify(&p.analysis).at(stage)?;
        let summaries = subgroup_summary(
            &r,
            &strata,
            cfg.subgroup_rows,
            cfg.arr_scale,
            cfg.bootstrap.cate_subgroup,
            crate::seeds::sub_seed(derive_seed(seed, "subgroups"), k as u64),
        )
        .at(stage)?;
        let strata_rows = summaries
            .into_iter()
            .enumerate()
            .map(|(g, summary)| {
                let tau: Vec<f64> = (0..r.tau.len())
                    .filter(|&i| strata.assignment[i] == Some(g))
                    .filter(|&i| cfg.subgroup_rows == SubgroupRows::All || r.included[i])
                    .map(|i| r.tau[i])
                    .collect();
                let tau_sd = sample_sd(&tau);
                let mde = minimum_detectable_effect(tau.len(), tau_sd, MDE_POWER, cfg.alpha).ok();
                SubgroupStratum {
                    underpowered: mde.is_some_and(|m| m > summary.mean_tau.abs()),
                    summary,
                    tau_sd,
                    mde,
                }
            })
            .collect();
        subgroups.push(SubgroupTable {
            name: def.name().to_string(),
            column: def.column().to_string(),
            strata: strata_rows,
        });
    }

    let r_summary = TauSummary::of(&included);
    Ok(CateSection {
        implied_arr: cfg.arr_scale * r_summary.mean,
        n_excluded: r.tau.len() - included.len(),
        r_learner: r_summary,
        clip_low,
        clip_high,
        t_learner: TauSummary::of(&t.tau),
        spearman_r_t: spearman(&included, &t_included).at(stage)?,
        subgroup_rows: cfg.subgroup_rows,
        subgroups,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySection {
    /// Primary contrast.
    pub risk_ratio: f64,
    pub e_point: f64,
    /// Risk ratio at the interval bound nearer the null (1 when the
    /// interval covers 0).
    pub risk_ratio_ci: f64,
    pub e_ci: f64,
    pub table: Vec<EvalueRow>,
}

pub fn sensitivity(cfg: &PipelineConfig, p: &Prepared, ace: &AceResult) -> Result<SensitivitySection, PipelineError> {
    let stage = Stage::Sensitivity;
    let risk_ratio = causal_risk_ratio(ace.risk_high, ace.risk_low).at(stage)?;
    let near_null = if ace.ci_low > 0.0 {
        Some(ace.ci_low)
    } else if ace.ci_high < 0.0 {
        Some(ace.ci_high)
    } else {
        None
    };
    let risk_ratio_ci = near_null.map_or(1.0, |b| (ace.risk_low + b) / ace.risk_low);
    let table = if cfg.intervention_grid.is_empty() {
        Vec::new()
    } else {
        e_value_table(&p.analysis, &cfg.spec, &cfg.intervention_grid, cfg.bootstrap.gcomp, stage.seed(cfg.seed))
            .at(stage)?
    };
    Ok(SensitivitySection {
        risk_ratio,
        e_point: e_value(risk_ratio).at(stage)?,
        risk_ratio_ci,
        e_ci: e_value(risk_ratio_ci).at(stage)?,
        table,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub provenance: String,
    pub seed: u64,
    pub missing: MissingMode,
    pub n_raw: usize,
    pub n_analysis: usize,
    pub s1: f64,
    pub s0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metadata: RunMetadata,
    pub baseline: BaselineSection,
    pub dag_tests: DagTestsSection,
    pub observational_model: Option<ObservationalSection>,
    pub ace: AceSection,
    pub triangulation: TriangulationSection,
    pub refutation: RefutationSection,
    pub cate: CateSection,
    pub sensitivity: SensitivitySection,
    pub config: PipelineConfig,
    /// Wall-clock durations; the only field that varies between runs.
    #[serde(default)]
    pub timings: Vec<StageTiming>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Serialization with the timings cleared, identical across runs with
    /// equal inputs.
    pub fn canonical_json(&self) -> String {
        let mut r = self.clone();
        r.timings.clear();
        r.to_json()
    }
}

fn timed<T>(timings: &mut Vec<StageTiming>, stage: Stage, f: impl FnOnce() -> Result<T, PipelineError>) -> Result<T, PipelineError> {
    let start = Instant::now();
    let out = f()?;
    timings.push(StageTiming {
        stage,
        seconds: start.elapsed().as_secs_f64(),
    });
    Ok(out)
}

/// Runs every stage in order on prepared inputs.
pub fn run_prepared(cfg: &PipelineConfig, p: &Prepared) -> Result<Report, PipelineError> {
    let mut tm = Vec::new();
    let baseline = timed(&mut tm, Stage::Baseline, || baseline(cfg, p))?;
    let dag_tests = timed(&mut tm, Stage::DagTests, || dag_tests(cfg, p))?;
    let observational_model = timed(&mut tm, Stage::ObservationalModel, || observational_model(cfg, p))?;
    let ace = timed(&mut tm, Stage::Ace, || ace(cfg, p))?;
    let triangulation = timed(&mut tm, Stage::Triangulation, || triangulation(cfg, p, &ace.contrast))?;
    let refutation = timed(&mut tm, Stage::Refutation, || refutation(cfg, p))?;
    let cate = timed(&mut tm, Stage::Cate, || cate(cfg, p))?;
    let sensitivity = timed(&mut tm, Stage::Sensitivity, || sensitivity(cfg, p, &ace.contrast))?;
    Ok(Report {
        metadata: RunMetadata {
            provenance: PROVENANCE.to_string(),
            seed: cfg.seed,
            missing: cfg.missing,
            n_raw: p.raw.n_rows(),
            n_analysis: p.analysis.n_rows(),
            s1: p.s1,
            s0: p.s0,
        },
        baseline,
        dag_tests,
        observational_model,
        ace,
        triangulation,
        refutation,
        cate,
        sensitivity,
        config: cfg.clone(),
        timings: tm,
    })
}

/// Validates, prepares and runs the full analysis.
pub fn run(cfg: &PipelineConfig) -> Result<Report, PipelineError> {
    let start = Instant::now();
    let p = prepare(cfg)?;
    let prep = start.elapsed().as_secs_f64();
    let mut report = run_prepared(cfg, &p)?;
    report.timings.insert(
        0,
        StageTiming {
            stage: Stage::Load,
            seconds: prep,
        },
    );
    Ok(report)
}

/// Writes `report.json` and the `tables/` side files.
pub fn write_report(report: &Report, out: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out).at(Stage::Output)?;
    std::fs::write(out.join("report.json"), report.to_json()).at(Stage::Output)?;
    write_tables(report, &out.join("tables")).at(Stage::Output)
}
