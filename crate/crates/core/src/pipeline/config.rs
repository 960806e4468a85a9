//! Pipeline configuration: a versioned JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::cate::{RLearnerConfig, SubgroupDefinition, SubgroupRows};
use crate::dataset::FieldSpec;
use crate::effects::CausalModelSpec;
use crate::synth::ScmSpec;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DataSource {
    Csv { path: PathBuf, schema: Vec<FieldSpec> },
    /// Sampled from an SCM; the graph defaults to the SCM's own.
    Synthetic {
        scm: ScmSpec,
        n: usize,
        /// Sampling seed; derived from the master seed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingMode {
    Impute,
    CompleteCase,
}

impl std::str::FromStr for MissingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "impute" => Ok(MissingMode::Impute),
            "complete-case" => Ok(MissingMode::CompleteCase),
            other => Err(format!("unknown missing-data mode `{other}` (expected impute or complete-case)")),
        }
    }
}

/// The primary contrast is `do(T = high)` versus `do(T = high − delta)`;
/// `high` defaults to the analysis-table mean of the treatment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub high: Option<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapCounts {
    pub gcomp: usize,
    pub psm: usize,
    pub ipw: usize,
    pub cate_subgroup: usize,
}

impl Default for BootstrapCounts {
    fn default() -> Self {
        BootstrapCounts {
            gcomp: 1500,
            psm: 800,
            ipw: 800,
            cate_subgroup: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaceboSpec {
    pub instrument: String,
    pub target: String,
    #[serde(default)]
    pub adjust: Vec<String>,
    /// Reported for transparency only; a failure does not count against
    /// the model.
    #[serde(default)]
    pub pre_specified_invalid: bool,
}

/// One conditional independence to test by partial correlation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImplicationSpec {
    pub x: String,
    pub y: String,
    #[serde(default)]
    pub cond: Vec<String>,
    /// The pair is adjacent in the graph, so dependence is the expected
    /// result; listed as a positive control.
    #[serde(default)]
    pub expect_dependent: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagTestConfig {
    /// Largest conditioning set among generated implications.
    pub max_cond_size: usize,
    /// Implications to test; when empty they are generated from the graph.
    #[serde(default)]
    pub implications: Vec<ImplicationSpec>,
}

impl Default for DagTestConfig {
    fn default() -> Self {
        DagTestConfig {
            max_cond_size: 3,
            implications: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub data: DataSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dag_path: Option<PathBuf>,
    pub spec: CausalModelSpec,
    pub contrast: Contrast,
    /// Treatment values for the dose-response curve.
    pub dose_grid: Vec<f64>,
    /// Treatment reductions for the E-value table.
    pub intervention_grid: Vec<f64>,
    #[serde(default)]
    pub dag_tests: DagTestConfig,
    #[serde(default)]
    pub bootstrap: BootstrapCounts,
    pub permutations: usize,
    pub caliper: f64,
    /// Binary column matched exactly in propensity score matching.
    pub match_stratum: String,
    pub trim_percentile: f64,
    #[serde(default)]
    pub rlearner: RLearnerConfig,
    #[serde(default)]
    pub subgroup_rows: SubgroupRows,
    /// Multiplier turning a per-unit tau into an implied risk difference.
    pub arr_scale: f64,
    #[serde(default)]
    pub placebos: Vec<PlaceboSpec>,
    #[serde(default)]
    pub subgroups: Vec<SubgroupDefinition>,
    /// Predictors of the associational (non-causal) outcome model.
    #[serde(default)]
    pub observational_predictors: Vec<String>,
    /// Variables described in the baseline table (grouped by outcome).
    #[serde(default)]
    pub baseline_variables: Vec<String>,
    pub naive_band_half_width: f64,
    pub seed: u64,
    pub missing: MissingMode,
    pub impute_iterations: usize,
    /// Significance level for implication verdicts.
    pub alpha: f64,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data and graph paths are taken
    /// relative to the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("reading {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        if let DataSource::Csv { path, .. } = &mut cfg.data {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if let Some(p) = &mut cfg.dag_path {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Column names the data source provides.
    pub fn columns(&self) -> Vec<String> {
        match &self.data {
            DataSource::Csv { schema, .. } => schema.iter().map(|f| f.name.clone()).collect(),
            DataSource::Synthetic { scm, .. } => scm.names(),
        }
    }

    /// Checks everything that needs neither data nor the graph.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let b = &self.bootstrap;
        for (name, v) in [
            ("bootstrap.gcomp", b.gcomp),
            ("bootstrap.psm", b.psm),
            ("bootstrap.ipw", b.ipw),
            ("bootstrap.cate_subgroup", b.cate_subgroup),
            ("permutations", self.permutations),
            ("impute_iterations", self.impute_iterations),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if b.gcomp < crate::effects::MIN_BOOTSTRAP {
            return bad(format!("bootstrap.gcomp must be at least {}", crate::effects::MIN_BOOTSTRAP));
        }
        if !(self.caliper >= 0.0) {
            return bad("caliper must be nonnegative".into());
        }
        if !(self.trim_percentile > 0.0 && self.trim_percentile <= 100.0) {
            return bad("trim_percentile must lie in (0, 100]".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)".into());
        }
        if !(self.contrast.delta.is_finite() && self.naive_band_half_width > 0.0 && self.arr_scale.is_finite()) {
            return bad("contrast.delta, naive_band_half_width and arr_scale must be finite (half-width positive)".into());
        }
        if self.dose_grid.is_empty() {
            return bad("dose_grid must not be empty".into());
        }
        if self.intervention_grid.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return bad("intervention_grid values must be nonnegative".into());
        }
        self.spec.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.rlearner.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if let DataSource::Synthetic { scm, n, .. } = &self.data {
            scm.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
            if *n == 0 {
                return bad("synthetic n must be positive".into());
            }
        }

        let columns = self.columns();
        let known = |c: &str| columns.iter().any(|k| k == c);
        let mut referenced: Vec<&str> = vec![&self.spec.treatment, &self.spec.outcome, &self.match_stratum];
        let covs = self.spec.covariates();
        referenced.extend(covs.iter().map(String::as_str));
        for p in &self.placebos {
            referenced.push(&p.instrument);
            referenced.push(&p.target);
            referenced.extend(p.adjust.iter().map(String::as_str));
        }
        for s in &self.subgroups {
            referenced.push(s.column());
        }
        for imp in &self.dag_tests.implications {
            referenced.push(&imp.x);
            referenced.push(&imp.y);
            referenced.extend(imp.cond.iter().map(String::as_str));
        }
        referenced.extend(self.observational_predictors.iter().map(String::as_str));
        referenced.extend(self.baseline_variables.iter().map(String::as_str));
        for c in referenced {
            if !known(c) {
                return bad(format!("column `{c}` is not provided by the data source"));
            }
        }
        Ok(())
    }
}
