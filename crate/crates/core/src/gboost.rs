//! Least-squares gradient boosting over depth-bounded regression trees.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoostError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("need at least {needed} rows (2 * min_leaf), found {found}")]
    InsufficientRows { needed: usize, found: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("weights must be finite, nonnegative and sum to a positive value")]
    InvalidWeights,
    #[error("non-finite value in features or target")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            n_estimators: 200,
            max_depth: 3,
            learning_rate: 0.05,
            min_leaf: 20,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<(), BoostError> {
        if self.n_estimators == 0 {
            return Err(BoostError::InvalidParams("n_estimators must be >= 1".into()));
        }
        if self.max_depth == 0 {
            return Err(BoostError::InvalidParams("max_depth must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(BoostError::InvalidParams(format!(
                "learning_rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if self.min_leaf == 0 {
            return Err(BoostError::InvalidParams("min_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf { value: f64 },
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// A regression tree stored as an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: impl Fn(usize) -> f64) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    k = if row(feature) <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, k: usize) -> usize {
            match t.nodes[k] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub base_value: f64,
    pub learning_rate: f64,
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

impl BoostedEnsemble {
    pub fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<f64>, BoostError> {
        if features.ncols() != self.n_features {
            return Err(BoostError::DimensionMismatch {
                expected: self.n_features,
                found: features.ncols(),
            });
        }
        Ok((0..features.nrows())
            .map(|i| {
                let mut f = self.base_value;
                for t in &self.trees {
                    f += self.learning_rate * t.predict_row(|j| features[(i, j)]);
                }
                f
            })
            .collect())
    }
}

/// Split threshold between consecutive distinct values `a < b`. Falls
/// back to `a` when the midpoint rounds up to `b`.
fn midpoint(a: f64, b: f64) -> f64 {
    let t = a + (b - a) / 2.0;
    if t >= b {
        a
    } else {
        t
    }
}

#[derive(Clone, Copy)]
struct Stats {
    w: f64,
    s: f64,
    count: usize,
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Fits a boosted ensemble. Every tree is grown level by level with an
/// exhaustive scan of midpoints between consecutive distinct values; the
/// first split with the strictly largest weighted variance reduction wins,
/// so ties resolve to the lowest feature and then the lowest threshold.
/// `min_leaf` counts rows, not weight. Nothing is randomised.
pub fn fit_gbm(
    features: &DMatrix<f64>,
    target: &[f64],
    params: &BoostParams,
    sample_weight: Option<&[f64]>,
) -> Result<BoostedEnsemble, BoostError> {
    params.validate()?;
    let n = features.nrows();
    let p = features.ncols();
    if target.len() != n {
        return Err(BoostError::DimensionMismatch { expected: n, found: target.len() });
    }
    if n < 2 * params.min_leaf {
        return Err(BoostError::InsufficientRows { needed: 2 * params.min_leaf, found: n });
    }
    if features.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(BoostError::NonFinite);
    }
    let weights: Vec<f64> = match sample_weight {
        Some(w) => {
            if w.len() != n {
                return Err(BoostError::DimensionMismatch { expected: n, found: w.len() });
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(BoostError::InvalidWeights);
            }
            w.to_vec()
        }
        None => vec![1.0; n],
    };
    let w_total: f64 = weights.iter().sum();
    let base_value = weights.iter().zip(target).map(|(w, y)| w * y).sum::<f64>() / w_total;
    let mut ensemble = BoostedEnsemble {
        base_value,
        learning_rate: params.learning_rate,
        n_features: p,
        trees: Vec::new(),
    };
    let first = target
        .iter()
        .zip(&weights)
        .find(|(_, w)| **w > 0.0)
        .map(|(y, _)| *y)
        .unwrap_or(base_value);
    let degenerate = target.iter().zip(&weights).all(|(y, w)| *w == 0.0 || *y == first);
    if degenerate {
        ensemble.base_value = first;
        return Ok(ensemble);
    }

    let order: Vec<Vec<usize>> = (0..p)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| features[(a, f)].total_cmp(&features[(b, f)]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut fitted = vec![base_value; n];
    let mut residual = vec![0.0; n];
    for _ in 0..params.n_estimators {
        for i in 0..n {
            residual[i] = target[i] - fitted[i];
        }
        let (tree, leaf_of) = grow_tree(features, &residual, &weights, &order, params);
        for i in 0..n {
            if let Node::Leaf { value } = tree.nodes[leaf_of[i]] {
                fitted[i] += params.learning_rate * value;
            }
        }
        ensemble.trees.push(tree);
    }
    Ok(ensemble)
}

/// Returns the tree and, for every training row, the arena index of the
/// leaf it lands in.
fn grow_tree(
    x: &DMatrix<f64>,
    r: &[f64],
    w: &[f64],
    order: &[Vec<usize>],
    params: &BoostParams,
) -> (Tree, Vec<usize>) {
    let n = r.len();
    let mut nodes: Vec<Node> = vec![Node::Leaf { value: 0.0 }];
    let mut node_of = vec![0usize; n];
    let mut frontier: Vec<usize> = vec![0];

    for _depth in 0..params.max_depth {
        if frontier.is_empty() {
            break;
        }
        // frontier slot of each arena node, if active
        let mut slot = vec![usize::MAX; nodes.len()];
        for (s, &k) in frontier.iter().enumerate() {
            slot[k] = s;
        }
        let mut totals = vec![Stats { w: 0.0, s: 0.0, count: 0 }; frontier.len()];
        for i in 0..n {
            let s = slot[node_of[i]];
            if s != usize::MAX {
                totals[s].w += w[i];
                totals[s].s += w[i] * r[i];
                totals[s].count += 1;
            }
        }
        let mut best: Vec<Option<Candidate>> = (0..frontier.len()).map(|_| None).collect();
        for (f, ord) in order.iter().enumerate() {
            let mut left = vec![Stats { w: 0.0, s: 0.0, count: 0 }; frontier.len()];
            let mut last = vec![f64::NAN; frontier.len()];
            for &i in ord {
                let s = slot[node_of[i]];
                if s == usize::MAX {
                    continue;
                }
                let v = x[(i, f)];
                let l = left[s];
                if l.count > 0 && v > last[s] {
                    let t = totals[s];
                    let rc = t.count - l.count;
                    let rw = t.w - l.w;
                    if l.count >= params.min_leaf && rc >= params.min_leaf && l.w > 0.0 && rw > 0.0 {
                        let rs = t.s - l.s;
                        let gain = l.s * l.s / l.w + rs * rs / rw - t.s * t.s / t.w;
                        if gain > 0.0 && best[s].as_ref().is_none_or(|b| gain > b.gain) {
                            best[s] = Some(Candidate { gain, feature: f, threshold: midpoint(last[s], v) });
                        }
                    }
                }
                left[s].w += w[i];
                left[s].s += w[i] * r[i];
                left[s].count += 1;
                last[s] = v;
            }
        }
        let mut next = Vec::new();
        for (s, &k) in frontier.iter().enumerate() {
            let t = totals[s];
            match best[s].take() {
                Some(c) => {
                    let l = nodes.len();
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes[k] = Node::Split { feature: c.feature, threshold: c.threshold, left: l, right: l + 1 };
                    next.push(l);
                    next.push(l + 1);
                }
                None => {
                    nodes[k] = Node::Leaf { value: leaf_value(t) };
                }
            }
        }
        for i in 0..n {
            if let Node::Split { feature, threshold, left, right } = nodes[node_of[i]] {
                node_of[i] = if x[(i, feature)] <= threshold { left } else { right };
            }
        }
        frontier = next;
    }
    // nodes still on the frontier become leaves
    if !frontier.is_empty() {
        let mut acc = vec![Stats { w: 0.0, s: 0.0, count: 0 }; nodes.len()];
        for i in 0..n {
            let a = &mut acc[node_of[i]];
            a.w += w[i];
            a.s += w[i] * r[i];
            a.count += 1;
        }
        for &k in &frontier {
            nodes[k] = Node::Leaf { value: leaf_value(acc[k]) };
        }
    }
    (Tree { nodes }, node_of)
}

fn leaf_value(t: Stats) -> f64 {
    if t.w > 0.0 {
        t.s / t.w
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mse(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
    }

    #[test]
    fn constant_target() {
        let x = DMatrix::from_fn(50, 2, |i, j| (i * (j + 1)) as f64);
        let m = fit_gbm(&x, &[3.5; 50], &BoostParams::default(), None).unwrap();
        assert!(m.trees.is_empty());
        let q = DMatrix::from_row_slice(2, 2, &[-1e6, 4.0, 1e9, 0.0]);
        assert_eq!(m.predict(&q).unwrap(), vec![3.5, 3.5]);
    }

    #[test]
    fn step_function_recovered() {
        let n = 200;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / n as f64);
        let y: Vec<f64> = (0..n).map(|i| if i < 77 { -1.0 } else { 2.0 }).collect();
        let params = BoostParams { n_estimators: 50, max_depth: 1, learning_rate: 0.5, min_leaf: 5 };
        let m = fit_gbm(&x, &y, &params, None).unwrap();
        assert!(mse(&m.predict(&x).unwrap(), &y) < 1e-3);
        assert_eq!(m.trees.len(), 50);
    }

    #[test]
    fn threshold_midpoints_and_routing() {
        assert_eq!(midpoint(1.0, 2.0), 1.5);
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        assert_eq!(midpoint(a, b), a);
    }

    #[test]
    fn invalid_inputs() {
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let y = vec![0.0; 10];
        let bad = BoostParams { learning_rate: 0.0, ..BoostParams::default() };
        assert!(matches!(fit_gbm(&x, &y, &bad, None), Err(BoostError::InvalidParams(_))));
        let p = BoostParams { min_leaf: 6, ..BoostParams::default() };
        assert!(matches!(fit_gbm(&x, &y, &p, None), Err(BoostError::InsufficientRows { .. })));
        let p = BoostParams { min_leaf: 1, ..BoostParams::default() };
        assert!(matches!(fit_gbm(&x, &y, &p, Some(&[0.0; 10])), Err(BoostError::InvalidWeights)));
        let m = fit_gbm(&x, &y, &p, None).unwrap();
        assert!(matches!(m.predict(&DMatrix::zeros(1, 2)), Err(BoostError::DimensionMismatch { .. })));
    }

    #[test]
    fn leaves_respect_min_leaf_and_depth() {
        let n = 120;
        let x = DMatrix::from_fn(n, 2, |i, j| ((i * 37 + j * 11) % 101) as f64);
        let y: Vec<f64> = (0..n).map(|i| ((i * 13) % 7) as f64).collect();
        let p = BoostParams { n_estimators: 5, max_depth: 3, learning_rate: 0.3, min_leaf: 10 };
        let m = fit_gbm(&x, &y, &p, None).unwrap();
        for t in &m.trees {
            assert!(t.depth() <= 3);
            let mut counts = vec![0usize; t.nodes.len()];
            for i in 0..n {
                let mut k = 0;
                while let Node::Split { feature, threshold, left, right } = t.nodes[k] {
                    k = if x[(i, feature)] <= threshold { left } else { right };
                }
                counts[k] += 1;
            }
            for (k, node) in t.nodes.iter().enumerate() {
                if matches!(node, Node::Leaf { .. }) {
                    assert!(counts[k] >= 10, "leaf {k} has {} rows", counts[k]);
                }
            }
        }
    }
}
