//! Linear-Gaussian / Bernoulli-logistic structural causal models: seeded
//! ancestral sampling and a Monte-Carlo interventional oracle.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::Dag;
use crate::dataset::{Column, ColumnKind, Table};
use crate::regress::sigmoid;
use crate::seeds::sub_seed;

/// Rows sampled per independently seeded chunk.
pub const CHUNK_ROWS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScmError {
    #[error("variable `{0}` declared twice")]
    Duplicate(String),
    #[error("variable `{child}` references `{parent}`, which is not declared before it")]
    BadParent { child: String, parent: String },
    #[error("variable `{0}`: noise scale must be finite and nonnegative")]
    BadScale(String),
    #[error("variable `{0}`: non-finite coefficient or intercept")]
    NonFinite(String),
    #[error("unknown variable `{0}`")]
    Unknown(String),
    #[error("outcome `{0}` must be a bernoulli variable")]
    OutcomeNotBinary(String),
    #[error("treatment and outcome are the same variable")]
    TreatmentIsOutcome,
    #[error("sample size must be at least 1")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum VariableKind {
    /// `intercept + Σ coef·parent + scale·ε`, ε ~ N(0, 1).
    Gaussian { scale: f64 },
    /// Bernoulli with success probability `sigmoid(intercept + Σ coef·parent)`.
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmVariable {
    pub name: String,
    pub kind: VariableKind,
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub coefficients: BTreeMap<String, f64>,
}

/// Variables listed in topological order; a parent must precede its
/// children.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmSpec {
    pub variables: Vec<ScmVariable>,
}

/// Parent indices and coefficients resolved against variable order.
struct Compiled {
    terms: Vec<Vec<(usize, f64)>>,
}

impl ScmSpec {
    pub fn validate(&self) -> Result<(), ScmError> {
        self.compile().map(|_| ())
    }

    fn compile(&self) -> Result<Compiled, ScmError> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        let mut terms = Vec::with_capacity(self.variables.len());
        for (j, v) in self.variables.iter().enumerate() {
            if let VariableKind::Gaussian { scale } = v.kind {
                if !scale.is_finite() || scale < 0.0 {
                    return Err(ScmError::BadScale(v.name.clone()));
                }
            }
            if !v.intercept.is_finite() || v.coefficients.values().any(|c| !c.is_finite()) {
                return Err(ScmError::NonFinite(v.name.clone()));
            }
            let mut t = Vec::with_capacity(v.coefficients.len());
            for (parent, coef) in &v.coefficients {
                let &k = seen.get(parent.as_str()).ok_or_else(|| ScmError::BadParent {
                    child: v.name.clone(),
                    parent: parent.clone(),
                })?;
                t.push((k, *coef));
            }
            if seen.insert(&v.name, j).is_some() {
                return Err(ScmError::Duplicate(v.name.clone()));
            }
            terms.push(t);
        }
        Ok(Compiled { terms })
    }

    pub fn index_of(&self, name: &str) -> Result<usize, ScmError> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| ScmError::Unknown(name.to_string()))
    }

    pub fn names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.name.clone()).collect()
    }

    /// Causal graph with one edge per listed coefficient (zero
    /// coefficients included, so a null variant keeps the same graph).
    pub fn to_dag(&self) -> Result<Dag, ScmError> {
        self.validate()?;
        let edges: Vec<(String, String)> = self
            .variables
            .iter()
            .flat_map(|v| v.coefficients.keys().map(move |p| (p.clone(), v.name.clone())))
            .collect();
        Ok(Dag::new(self.names(), edges).expect("a validated SCM is acyclic"))
    }

    /// Copy with one coefficient replaced (or added).
    pub fn with_coefficient(&self, child: &str, parent: &str, value: f64) -> Result<ScmSpec, ScmError> {
        let mut out = self.clone();
        let j = out.index_of(child)?;
        out.variables[j].coefficients.insert(parent.to_string(), value);
        out.validate()?;
        Ok(out)
    }
}

/// Samples one chunk column-by-column. `fixed` replaces the structural
/// equation of one variable with a constant.
fn sample_chunk(spec: &ScmSpec, compiled: &Compiled, rows: usize, seed: u64, fixed: Option<(usize, f64)>) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = spec.variables.len();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(p);
    for j in 0..p {
        let var = &spec.variables[j];
        let mut col = Vec::with_capacity(rows);
        for i in 0..rows {
            // noise is drawn even for the fixed variable so surgery leaves
            // the random stream of every other variable untouched
            let value = match var.kind {
                VariableKind::Gaussian { scale } => {
                    let eps: f64 = rng.sample(StandardNormal);
                    let mean = var.intercept + compiled.terms[j].iter().map(|&(k, c)| c * cols[k][i]).sum::<f64>();
                    mean + scale * eps
                }
                VariableKind::Bernoulli => {
                    let u: f64 = rng.random();
                    let eta = var.intercept + compiled.terms[j].iter().map(|&(k, c)| c * cols[k][i]).sum::<f64>();
                    if u < sigmoid(eta) {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            col.push(match fixed {
                Some((f, s)) if f == j => s,
                _ => value,
            });
        }
        cols.push(col);
    }
    cols
}

fn chunk_sizes(n: usize) -> Vec<usize> {
    (0..n.div_ceil(CHUNK_ROWS))
        .map(|c| CHUNK_ROWS.min(n - c * CHUNK_ROWS))
        .collect()
}

fn sample_columns(spec: &ScmSpec, n: usize, seed: u64, fixed: Option<(usize, f64)>) -> Result<Vec<Vec<f64>>, ScmError> {
    if n == 0 {
        return Err(ScmError::Empty);
    }
    let compiled = spec.compile()?;
    let chunks: Vec<Vec<Vec<f64>>> = chunk_sizes(n)
        .into_par_iter()
        .enumerate()
        .map(|(c, rows)| sample_chunk(spec, &compiled, rows, sub_seed(seed, c as u64), fixed))
        .collect();
    let mut cols = vec![Vec::with_capacity(n); spec.variables.len()];
    for chunk in chunks {
        for (col, part) in cols.iter_mut().zip(chunk) {
            col.extend(part);
        }
    }
    Ok(cols)
}

fn to_table(spec: &ScmSpec, cols: Vec<Vec<f64>>) -> Table {
    let columns = spec
        .variables
        .iter()
        .zip(cols)
        .map(|(v, values)| {
            let kind = match v.kind {
                VariableKind::Gaussian { .. } => ColumnKind::Continuous,
                VariableKind::Bernoulli => ColumnKind::Binary,
            };
            Column::complete(v.name.clone(), kind, values)
        })
        .collect();
    Table::new(columns).expect("sampled columns are consistent")
}

/// Observational sample of `n` rows. Chunks of [`CHUNK_ROWS`] are drawn
/// in parallel from per-chunk seeds and concatenated in order, so the
/// output depends only on `(spec, n, seed)`.
pub fn generate(spec: &ScmSpec, n: usize, seed: u64) -> Result<Table, ScmError> {
    Ok(to_table(spec, sample_columns(spec, n, seed, None)?))
}

/// Sample under `do(variable = value)`.
pub fn generate_intervened(spec: &ScmSpec, variable: &str, value: f64, n: usize, seed: u64) -> Result<Table, ScmError> {
    let j = spec.index_of(variable)?;
    Ok(to_table(spec, sample_columns(spec, n, seed, Some((j, value)))?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub do_value: f64,
    pub risk: f64,
    pub mc_n: usize,
    pub mc_se: f64,
}

/// Monte-Carlo estimate of `P(outcome = 1 | do(treatment = s))` by graph
/// surgery on the treatment's structural equation.
pub fn mc_interventional_risk(
    spec: &ScmSpec,
    treatment: &str,
    s: f64,
    outcome: &str,
    n_mc: usize,
    seed: u64,
) -> Result<OracleResult, ScmError> {
    if treatment == outcome {
        return Err(ScmError::TreatmentIsOutcome);
    }
    let t = spec.index_of(treatment)?;
    let y = spec.index_of(outcome)?;
    if spec.variables[y].kind != VariableKind::Bernoulli {
        return Err(ScmError::OutcomeNotBinary(outcome.to_string()));
    }
    if n_mc == 0 {
        return Err(ScmError::Empty);
    }
    let compiled = spec.compile()?;
    let events: f64 = chunk_sizes(n_mc)
        .into_par_iter()
        .enumerate()
        .map(|(c, rows)| {
            let cols = sample_chunk(spec, &compiled, rows, sub_seed(seed, c as u64), Some((t, s)));
            cols[y].iter().sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum();
    let risk = events / n_mc as f64;
    Ok(OracleResult {
        do_value: s,
        risk,
        mc_n: n_mc,
        mc_se: (risk * (1.0 - risk) / n_mc as f64).sqrt(),
    })
}

fn gaussian(name: &str, intercept: f64, scale: f64, coefs: &[(&str, f64)]) -> ScmVariable {
    ScmVariable {
        name: name.into(),
        kind: VariableKind::Gaussian { scale },
        intercept,
        coefficients: coefs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

fn bernoulli(name: &str, intercept: f64, coefs: &[(&str, f64)]) -> ScmVariable {
    ScmVariable {
        name: name.into(),
        kind: VariableKind::Bernoulli,
        intercept,
        coefficients: coefs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

/// Treatment coefficient (log-odds per mmHg) of the reference outcome
/// equation.
pub const REFERENCE_SYSBP_EFFECT: f64 = 0.0185;

/// Small cohort-like SCM: age, sex, BMI and smoking confound a Gaussian
/// systolic pressure, which raises the log-odds of a binary CHD outcome
/// by `sysbp_effect` per mmHg. With the reference effect the 20 mmHg
/// interventional risk difference is roughly 3 pp at a baseline risk
/// near 13%.
pub fn reference_scm(sysbp_effect: f64) -> ScmSpec {
    ScmSpec {
        variables: vec![
            gaussian("AGE", 50.0, 8.5, &[]),
            bernoulli("SEX_MALE", -0.2, &[]),
            gaussian("BMI", 20.0, 3.9, &[("AGE", 0.1), ("SEX_MALE", 0.8)]),
            bernoulli("CURSMOKE", 1.5, &[("AGE", -0.03)]),
            gaussian("SYSBP", 45.0, 17.0, &[("AGE", 1.1), ("BMI", 1.3), ("SEX_MALE", 3.0)]),
            bernoulli(
                "CHD",
                -8.75,
                &[
                    ("AGE", 0.06),
                    ("SEX_MALE", 0.45),
                    ("CURSMOKE", 0.35),
                    ("BMI", 0.03),
                    ("SYSBP", sysbp_effect),
                ],
            ),
        ],
    }
}
