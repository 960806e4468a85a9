//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use docausal::dag::Dag;
use docausal::dataset::{Column, ColumnKind, Table};
use docausal::synth::{ScmSpec, ScmVariable, VariableKind};
use nalgebra::{DMatrix, DVector};

pub const NAMES: [&str; 5] = ["A", "B", "C", "D", "E"];

/// Every labelled DAG on `n` nodes, as edge lists over node indices.
/// Each unordered pair is absent, forward or backward; cyclic
/// orientations are dropped.
pub fn all_dags(n: usize) -> Vec<Vec<(usize, usize)>> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let total = 3usize.pow(pairs.len() as u32);
    let mut out = Vec::new();
    for mut code in 0..total {
        let mut edges = Vec::new();
        for &(a, b) in &pairs {
            match code % 3 {
                1 => edges.push((a, b)),
                2 => edges.push((b, a)),
                _ => {}
            }
            code /= 3;
        }
        if is_acyclic(n, &edges) {
            out.push(edges);
        }
    }
    out
}

fn is_acyclic(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut indeg = vec![0; n];
    for &(_, b) in edges {
        indeg[b] += 1;
    }
    let mut stack: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(v) = stack.pop() {
        seen += 1;
        for &(a, b) in edges {
            if a == v {
                indeg[b] -= 1;
                if indeg[b] == 0 {
                    stack.push(b);
                }
            }
        }
    }
    seen == n
}

pub fn build_dag(n: usize, edges: &[(usize, usize)]) -> Dag {
    Dag::new(NAMES[..n].iter().copied(), edges.iter().map(|&(a, b)| (NAMES[a], NAMES[b]))).unwrap()
}

/// Nodes reachable from `v` along directed edges, `v` included.
fn reach(n: usize, edges: &[(usize, usize)], v: usize) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut stack = vec![v];
    seen[v] = true;
    while let Some(u) = stack.pop() {
        for &(a, b) in edges {
            if a == u && !seen[b] {
                seen[b] = true;
                stack.push(b);
            }
        }
    }
    seen
}

/// d-separation by enumerating every simple path of the skeleton and
/// checking each interior node directly.
pub fn d_separated_by_paths(n: usize, edges: &[(usize, usize)], x: usize, y: usize, cond: &[bool]) -> bool {
    let has = |a: usize, b: usize| edges.contains(&(a, b));
    let collider_open: Vec<bool> = (0..n).map(|v| reach(n, edges, v).iter().zip(cond).any(|(r, c)| *r && *c)).collect();

    fn walk(
        n: usize,
        path: &mut Vec<usize>,
        y: usize,
        has: &dyn Fn(usize, usize) -> bool,
        cond: &[bool],
        collider_open: &[bool],
    ) -> bool {
        let last = *path.last().unwrap();
        if last == y {
            return path.windows(3).all(|w| {
                let (a, m, b) = (w[0], w[1], w[2]);
                if has(a, m) && has(b, m) {
                    collider_open[m]
                } else {
                    !cond[m]
                }
            });
        }
        for next in 0..n {
            if path.contains(&next) || !(has(last, next) || has(next, last)) {
                continue;
            }
            path.push(next);
            let active = walk(n, path, y, has, cond, collider_open);
            path.pop();
            if active {
                return true;
            }
        }
        false
    }

    !walk(n, &mut vec![x], y, &has, cond, &collider_open)
}

/// OLS coefficients from the normal equations `(XᵀX)β = Xᵀy` with an
/// intercept column prepended, solved by Cholesky.
pub fn normal_equations(x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let n = x.nrows();
    let mut a = DMatrix::from_element(n, x.ncols() + 1, 1.0);
    a.view_mut((0, 1), (n, x.ncols())).copy_from(x);
    let xtx = a.transpose() * &a;
    let xty = a.transpose() * DVector::from_column_slice(y);
    xtx.cholesky().unwrap().solve(&xty).iter().copied().collect()
}

/// Bernoulli log-likelihood of `(b0, b1)` for a single covariate.
pub fn loglik_1d(x: &[f64], y: &[f64], b0: f64, b1: f64) -> f64 {
    x.iter()
        .zip(y)
        .map(|(xi, yi)| {
            let eta = b0 + b1 * xi;
            let p = 1.0 / (1.0 + (-eta).exp());
            yi * p.ln() + (1.0 - yi) * (1.0 - p).ln()
        })
        .sum()
}

/// Maximizes [`loglik_1d`] by repeatedly refining an 11×11 grid around the
/// current best point, shrinking the step by 5 each round.
pub fn grid_search_mle(x: &[f64], y: &[f64], center: (f64, f64), half_width: f64) -> (f64, f64) {
    let mut best = center;
    let mut step = half_width / 5.0;
    while step > 1e-7 {
        let (c0, c1) = best;
        let mut best_ll = f64::NEG_INFINITY;
        for i in -5..=5 {
            for j in -5..=5 {
                let b = (c0 + i as f64 * step, c1 + j as f64 * step);
                let ll = loglik_1d(x, y, b.0, b.1);
                if ll > best_ll {
                    best_ll = ll;
                    best = b;
                }
            }
        }
        step /= 5.0;
    }
    best
}

/// Exact two-sided Mann–Whitney p-value by enumerating every assignment
/// of the pooled (untied) values to the first sample.
pub fn exact_mann_whitney(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let m = a.len();
    let u_of = |first: &[usize]| -> f64 {
        let mut u = 0.0;
        for &i in first {
            for j in 0..n {
                if !first.contains(&j) && pooled[i] > pooled[j] {
                    u += 1.0;
                }
            }
        }
        u
    };
    let observed = u_of(&(0..m).collect::<Vec<_>>());
    let mut all = Vec::new();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == m {
            let idx: Vec<usize> = (0..n).filter(|k| mask & (1 << k) != 0).collect();
            all.push(u_of(&idx));
        }
    }
    let total = all.len() as f64;
    let le = all.iter().filter(|u| **u <= observed).count() as f64 / total;
    let ge = all.iter().filter(|u| **u >= observed).count() as f64 / total;
    (2.0 * le.min(ge)).min(1.0)
}

pub fn student_t_density(t: f64, df: f64) -> f64 {
    let ln_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    (ln_c - (df + 1.0) / 2.0 * (1.0 + t * t / df).ln()).exp()
}

/// Lanczos approximation (g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Adaptive Simpson quadrature.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f((a + b) / 2.0) + f(b))
    }
    fn go(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = (a + b) / 2.0;
        let (l, r) = (simpson(f, a, m), simpson(f, m, b));
        if depth == 0 || (l + r - whole).abs() <= 15.0 * tol {
            l + r + (l + r - whole) / 15.0
        } else {
            go(f, a, m, l, tol / 2.0, depth - 1) + go(f, m, b, r, tol / 2.0, depth - 1)
        }
    }
    go(f, a, b, simpson(f, a, b), tol, 50)
}

/// `Σ_z [E(Y | T=1, z) − E(Y | T=0, z)] P(z)` for discrete `z`.
pub fn standardization(z: &[f64], t: &[f64], y: &[f64]) -> f64 {
    let mut levels: Vec<f64> = z.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let n = z.len() as f64;
    levels
        .iter()
        .map(|&l| {
            let rate = |arm: f64| {
                let (mut s, mut k) = (0.0, 0.0);
                for i in 0..z.len() {
                    if z[i] == l && t[i] == arm {
                        s += y[i];
                        k += 1.0;
                    }
                }
                s / k
            };
            let pz = z.iter().filter(|v| **v == l).count() as f64 / n;
            (rate(1.0) - rate(0.0)) * pz
        })
        .sum()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

pub fn continuous(name: &str, v: Vec<f64>) -> Column {
    Column::complete(name, ColumnKind::Continuous, v)
}

pub fn binary(name: &str, v: Vec<f64>) -> Column {
    Column::complete(name, ColumnKind::Binary, v)
}

pub fn table(columns: Vec<Column>) -> Table {
    Table::new(columns).unwrap()
}

pub fn workspace_path(rel: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub fn gauss(name: &str, intercept: f64, scale: f64, coefs: &[(&str, f64)]) -> ScmVariable {
    ScmVariable {
        name: name.into(),
        kind: VariableKind::Gaussian { scale },
        intercept,
        coefficients: coefs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

pub fn bern(name: &str, intercept: f64, coefs: &[(&str, f64)]) -> ScmVariable {
    ScmVariable {
        name: name.into(),
        kind: VariableKind::Bernoulli,
        intercept,
        coefficients: coefs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

pub fn scm(variables: Vec<ScmVariable>) -> ScmSpec {
    ScmSpec { variables }
}
