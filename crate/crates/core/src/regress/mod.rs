//! Ordinary least squares, logistic regression by iteratively reweighted
//! least squares, partial correlation and the distribution tails used by
//! the hypothesis tests.
//!
//! Designs are passed without an intercept column; [`Intercept::Include`]
//! prepends one, and fitted coefficients then list the intercept first.

pub mod dist;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dist::{tail_probability, Distribution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegressError {
    #[error("singular design: {0}")]
    Singular(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{rows} rows cannot support {params} parameters")]
    InsufficientRows { rows: usize, params: usize },
    #[error("response must be 0/1, found {0}")]
    NonBinaryResponse(f64),
    #[error("correlation undefined: residual vector is constant")]
    UndefinedCorrelation,
    #[error("non-finite input")]
    NonFinite,
    #[error("invalid degrees of freedom {0}")]
    InvalidDf(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Intercept {
    #[default]
    Include,
    Exclude,
}

/// Why a logistic fit stopped without meeting its tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitDiagnostic {
    MaxIterations { max_iter: usize },
    /// Some fitted linear predictor exceeded [`SEPARATION_BOUND`] in
    /// magnitude: the data are (quasi-)separated and the MLE diverges.
    Separation { max_abs_linear_predictor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub converged: bool,
    pub log_likelihood: f64,
    pub n_observations: usize,
    pub intercept: bool,
    pub iterations: usize,
    pub diagnostic: Option<FitDiagnostic>,
}

impl FitResult {
    /// Residual degrees of freedom.
    pub fn df_residual(&self) -> usize {
        self.n_observations.saturating_sub(self.coefficients.len())
    }

    /// Coefficient index of design column `j`.
    pub fn coef_index(&self, j: usize) -> usize {
        j + usize::from(self.intercept)
    }

    /// Linear predictor for each design row.
    pub fn linear_predictor(&self, design: &DMatrix<f64>) -> Result<Vec<f64>, RegressError> {
        let width = self.coefficients.len() - usize::from(self.intercept);
        if design.ncols() != width {
            return Err(RegressError::DimensionMismatch {
                expected: width,
                found: design.ncols(),
            });
        }
        let offset = if self.intercept { self.coefficients[0] } else { 0.0 };
        let slopes = &self.coefficients[usize::from(self.intercept)..];
        Ok((0..design.nrows())
            .map(|i| {
                offset
                    + slopes
                        .iter()
                        .enumerate()
                        .map(|(j, b)| b * design[(i, j)])
                        .sum::<f64>()
            })
            .collect())
    }
}

pub fn augment(design: &DMatrix<f64>, intercept: Intercept) -> DMatrix<f64> {
    match intercept {
        Intercept::Exclude => design.clone(),
        Intercept::Include => {
            let (n, k) = design.shape();
            DMatrix::from_fn(n, k + 1, |i, j| if j == 0 { 1.0 } else { design[(i, j - 1)] })
        }
    }
}

fn check_inputs(x: &DMatrix<f64>, y: &[f64]) -> Result<(), RegressError> {
    if x.nrows() != y.len() {
        return Err(RegressError::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if x.nrows() < x.ncols() + 1 {
        return Err(RegressError::InsufficientRows {
            rows: x.nrows(),
            params: x.ncols(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(RegressError::NonFinite);
    }
    Ok(())
}

/// Relative size below which a QR pivot marks a column as a linear
/// combination of the earlier ones.
const RANK_TOL: f64 = 1e-10;

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Least-squares fit via a thin QR decomposition. Standard errors come
/// from `σ̂²(XᵀX)⁻¹` with `σ̂² = RSS / (n − p)`.
pub fn ols_fit(design: &DMatrix<f64>, response: &[f64], intercept: Intercept) -> Result<FitResult, RegressError> {
    let x = augment(design, intercept);
    check_inputs(&x, response)?;
    let (n, p) = x.shape();
    let y = DVector::from_column_slice(response);

    let qr = x.clone().qr();
    let r = qr.r();
    for j in 0..p {
        let col_norm = x.column(j).norm();
        if col_norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * col_norm {
            return Err(RegressError::Singular(format!(
                "design column {j} is linearly dependent on earlier columns"
            )));
        }
    }
    let qty = qr.q().transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| RegressError::Singular("triangular solve failed".into()))?;
    let resid = &y - &x * &beta;
    let rss = resid.norm_squared();
    let df = (n - p) as f64;
    let sigma2 = rss / df;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| RegressError::Singular("triangular inverse failed".into()))?;
    let cov = (&r_inv * r_inv.transpose()) * sigma2;
    let sigma2_mle = rss / n as f64;
    let log_likelihood = if sigma2_mle > 0.0 {
        -0.5 * n as f64 * ((2.0 * std::f64::consts::PI * sigma2_mle).ln() + 1.0)
    } else {
        f64::INFINITY
    };

    Ok(FitResult {
        coefficients: beta.iter().copied().collect(),
        standard_errors: (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect(),
        covariance: to_rows(&cov),
        converged: true,
        log_likelihood,
        n_observations: n,
        intercept: intercept == Intercept::Include,
        iterations: 1,
        diagnostic: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub intercept: Intercept,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            max_iter: 100,
            tol: 1e-8,
            intercept: Intercept::Include,
        }
    }
}

/// Linear-predictor magnitude beyond which a fit is treated as separated
/// (fitted probabilities within ~1e-13 of 0 or 1).
pub const SEPARATION_BOUND: f64 = 30.0;

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

/// Bernoulli log-likelihood of `beta` on an already-augmented design.
pub fn logistic_log_likelihood(x: &DMatrix<f64>, y: &[f64], beta: &[f64]) -> f64 {
    let b = DVector::from_column_slice(beta);
    let eta = x * b;
    eta.iter().zip(y).map(|(e, yi)| yi * e - softplus(*e)).sum()
}

/// Gradient of [`logistic_log_likelihood`] in `beta`: `Xᵀ(y − p)`.
pub fn logistic_score(x: &DMatrix<f64>, y: &[f64], beta: &[f64]) -> Vec<f64> {
    let eta = x * DVector::from_column_slice(beta);
    let resid = DVector::from_iterator(y.len(), eta.iter().zip(y).map(|(e, yi)| yi - sigmoid(*e)));
    (x.transpose() * resid).iter().copied().collect()
}

/// Logistic regression by Newton/IRLS with step-halving.
pub fn logistic_fit(
    design: &DMatrix<f64>,
    response: &[f64],
    opts: &LogisticOptions,
) -> Result<FitResult, RegressError> {
    logistic_fit_traced(design, response, opts).map(|(fit, _)| fit)
}

/// As [`logistic_fit`], also returning the log-likelihood after every
/// accepted iteration (starting at `β = 0`).
pub fn logistic_fit_traced(
    design: &DMatrix<f64>,
    response: &[f64],
    opts: &LogisticOptions,
) -> Result<(FitResult, Vec<f64>), RegressError> {
    let x = augment(design, opts.intercept);
    check_inputs(&x, response)?;
    if let Some(v) = response.iter().find(|v| **v != 0.0 && **v != 1.0) {
        return Err(RegressError::NonBinaryResponse(*v));
    }
    let (n, p) = x.shape();
    let y = DVector::from_column_slice(response);
    let mut beta = DVector::<f64>::zeros(p);
    let mut eta = DVector::<f64>::zeros(n);
    let mut ll = logistic_log_likelihood(&x, response, beta.as_slice());
    let mut trace = vec![ll];
    let mut converged = false;
    let mut diagnostic = None;
    let mut iterations = 0;
    let mut info_chol = None;

    while iterations < opts.max_iter {
        let prob = eta.map(sigmoid);
        let score = x.transpose() * (&y - &prob);
        let w = prob.map(|q| q * (1.0 - q));
        let mut xw = x.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let info = x.transpose() * xw;
        let chol = info.clone().cholesky();
        if score.amax() < opts.tol {
            // One last Newton step: its likelihood gain is below rounding
            // noise but it still removes the remaining error.
            if let Some(c) = &chol {
                beta += c.solve(&score);
                eta = &x * &beta;
                ll = logistic_log_likelihood(&x, response, beta.as_slice());
            }
            converged = true;
            info_chol = chol;
            break;
        }
        let Some(chol) = chol else {
            if eta.amax() > SEPARATION_BOUND {
                diagnostic = Some(FitDiagnostic::Separation {
                    max_abs_linear_predictor: eta.amax(),
                });
                break;
            }
            return Err(RegressError::Singular("information matrix is not positive definite".into()));
        };
        let step = chol.solve(&score);
        if step.iter().any(|v| !v.is_finite()) {
            return Err(RegressError::Singular("non-finite Newton step".into()));
        }
        iterations += 1;

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let cand = &beta + &step * scale;
            let cand_ll = logistic_log_likelihood(&x, response, cand.as_slice());
            if cand_ll >= ll {
                beta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        eta = &x * &beta;
        info_chol = Some(chol);
        if !accepted {
            // No ascent possible from here: numerically at the optimum.
            converged = true;
            break;
        }
        trace.push(ll);
        if (&step * scale).norm() < opts.tol {
            converged = true;
            break;
        }
        if eta.amax() > SEPARATION_BOUND {
            diagnostic = Some(FitDiagnostic::Separation {
                max_abs_linear_predictor: eta.amax(),
            });
            break;
        }
    }
    if !converged && diagnostic.is_none() {
        diagnostic = Some(FitDiagnostic::MaxIterations {
            max_iter: opts.max_iter,
        });
    }

    // Covariance from the information at the final estimate.
    let prob = eta.map(sigmoid);
    let mut xw = x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= prob[i] * (1.0 - prob[i]);
    }
    let info = x.transpose() * xw;
    let cov = match info.clone().cholesky().or(info_chol) {
        Some(ch) => ch.inverse(),
        None => DMatrix::from_element(p, p, f64::NAN),
    };

    let fit = FitResult {
        coefficients: beta.iter().copied().collect(),
        standard_errors: (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect(),
        covariance: to_rows(&cov),
        converged,
        log_likelihood: ll,
        n_observations: n,
        intercept: opts.intercept == Intercept::Include,
        iterations,
        diagnostic,
    };
    Ok((fit, trace))
}

/// Inverse-logit of the linear predictor, kept strictly inside (0, 1).
pub fn predict_proba(fit: &FitResult, design: &DMatrix<f64>) -> Result<Vec<f64>, RegressError> {
    const LO: f64 = f64::MIN_POSITIVE;
    const HI: f64 = 1.0 - f64::EPSILON / 2.0;
    Ok(fit
        .linear_predictor(design)?
        .into_iter()
        .map(|e| sigmoid(e).clamp(LO, HI))
        .collect())
}

/// Wald interval `β ± z·se` for coefficient index `k`.
pub fn wald_interval(fit: &FitResult, k: usize, level: f64) -> (f64, f64) {
    let z = dist::normal_quantile(0.5 + level / 2.0);
    let (b, se) = (fit.coefficients[k], fit.standard_errors[k]);
    (b - z * se, b + z * se)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialCorrelation {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
    pub k: usize,
}

fn residualize(v: &[f64], z: &DMatrix<f64>) -> Result<Vec<f64>, RegressError> {
    let fit = ols_fit(z, v, Intercept::Include)?;
    let fitted = fit.linear_predictor(z)?;
    Ok(v.iter().zip(fitted).map(|(a, b)| a - b).collect())
}

/// Correlation of `x` and `y` after regressing each on `z` (plus an
/// intercept), with a two-sided t-test on `n − 2 − k` degrees of freedom.
pub fn partial_correlation(x: &[f64], y: &[f64], z: &DMatrix<f64>) -> Result<PartialCorrelation, RegressError> {
    let n = x.len();
    if y.len() != n || z.nrows() != n {
        return Err(RegressError::DimensionMismatch {
            expected: n,
            found: if y.len() != n { y.len() } else { z.nrows() },
        });
    }
    let k = z.ncols();
    if n <= k + 3 {
        return Err(RegressError::InsufficientRows { rows: n, params: k + 3 });
    }
    let rx = residualize(x, z)?;
    let ry = residualize(y, z)?;
    let sxx: f64 = rx.iter().map(|v| v * v).sum();
    let syy: f64 = ry.iter().map(|v| v * v).sum();
    let scale = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / n as f64;
        v.iter().map(|a| (a - m) * (a - m)).sum::<f64>()
    };
    if sxx <= 1e-24 * scale(x).max(f64::MIN_POSITIVE) || syy <= 1e-24 * scale(y).max(f64::MIN_POSITIVE) {
        return Err(RegressError::UndefinedCorrelation);
    }
    let r = (rx.iter().zip(&ry).map(|(a, b)| a * b).sum::<f64>() / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2 - k) as f64;
    let p_value = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        dist::student_t_two_sided(t, df)?
    };
    Ok(PartialCorrelation { r, p_value, n, k })
}

/// Pearson correlation of two equal-length slices.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        None
    } else {
        Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
    }
}
