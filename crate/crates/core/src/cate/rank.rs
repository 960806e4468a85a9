//! Rank-based tests: Mann–Whitney U, Kruskal–Wallis H and Spearman's rho.
//! Ties receive midranks throughout.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regress::dist::{normal_two_sided, tail_probability, Distribution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RankTestError {
    #[error("each sample needs at least {needed} values, found {found}")]
    TooFewValues { needed: usize, found: usize },
    #[error("need at least two groups")]
    TooFewGroups,
    #[error("all values are identical; the test statistic is undefined")]
    Degenerate,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite value in sample")]
    NonFinite,
}

/// Midranks (1-based) of `values` plus the tie term `Σ (t³ − t)` over tie
/// groups.
pub fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j share the average of ranks i+1..=j
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    (ranks, ties)
}

fn check_finite(v: &[f64]) -> Result<(), RankTestError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(RankTestError::NonFinite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub p_value: f64,
}

/// Samples both shorter than this without ties get an exact p-value.
pub const EXACT_MAX_LEN: usize = 8;

/// Counts of `U = 0..=m·n` over all `C(m+n, m)` rank assignments, from
/// `f(u; m, n) = f(u − n; m − 1, n) + f(u; m, n − 1)`.
fn exact_u_counts(m: usize, n: usize) -> Vec<f64> {
    // table[i][j] is the count vector for sample sizes (i, j)
    let mut table: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); n + 1]; m + 1];
    for i in 0..=m {
        for j in 0..=n {
            table[i][j] = if i == 0 || j == 0 {
                vec![1.0]
            } else {
                let mut c = vec![0.0; i * j + 1];
                for (u, v) in table[i - 1][j].iter().enumerate() {
                    c[u + j] += v;
                }
                for (u, v) in table[i][j - 1].iter().enumerate() {
                    c[u] += v;
                }
                c
            };
        }
    }
    std::mem::take(&mut table[m][n])
}

/// Two-sided Mann–Whitney U test. Small tie-free samples (both shorter
/// than [`EXACT_MAX_LEN`]) use the exact null distribution,
/// `p = min(1, 2·min(P(U ≤ u), P(U ≥ u)))`; otherwise a normal
/// approximation with tie-corrected variance and a 0.5 continuity
/// correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, RankTestError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(RankTestError::TooFewValues { needed: 2, found: s.len() });
        }
        check_finite(s)?;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let ra: f64 = ranks[..a.len()].iter().sum();
    let u = ra - na * (na + 1.0) / 2.0;
    if ties == 0.0 && a.len() < EXACT_MAX_LEN && b.len() < EXACT_MAX_LEN {
        let counts = exact_u_counts(a.len(), b.len());
        let total: f64 = counts.iter().sum();
        let k = u.round() as usize;
        let below: f64 = counts[..=k].iter().sum();
        let above: f64 = counts[k..].iter().sum();
        return Ok(MannWhitney {
            u,
            p_value: (2.0 * below.min(above) / total).min(1.0),
        });
    }
    let mean = na * nb / 2.0;
    let var = na * nb / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if var <= 0.0 {
        return Err(RankTestError::Degenerate);
    }
    let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
    Ok(MannWhitney {
        u,
        p_value: normal_two_sided(z),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub p_value: f64,
}

/// Tie-corrected Kruskal–Wallis H with a chi-square reference on
/// `groups − 1` degrees of freedom.
pub fn kruskal_wallis(groups: &[&[f64]]) -> Result<KruskalWallis, RankTestError> {
    if groups.len() < 2 {
        return Err(RankTestError::TooFewGroups);
    }
    for g in groups {
        if g.len() < 2 {
            return Err(RankTestError::TooFewValues { needed: 2, found: g.len() });
        }
        check_finite(g)?;
    }
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    let n = pooled.len() as f64;
    let (ranks, ties) = midranks(&pooled);
    let correction = 1.0 - ties / (n * n * n - n);
    if correction <= 0.0 {
        return Err(RankTestError::Degenerate);
    }
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h = (12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction;
    let h = h.max(0.0);
    let df = (groups.len() - 1) as f64;
    let p_value = tail_probability(Distribution::ChiSquare { df }, h).expect("df >= 1");
    Ok(KruskalWallis { h, p_value })
}

/// Spearman's rank correlation (Pearson correlation of midranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, RankTestError> {
    if a.len() != b.len() {
        return Err(RankTestError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 3 {
        return Err(RankTestError::TooFewValues { needed: 3, found: a.len() });
    }
    check_finite(a)?;
    check_finite(b)?;
    let (ra, _) = midranks(a);
    let (rb, _) = midranks(b);
    crate::regress::pearson(&ra, &rb).ok_or(RankTestError::Degenerate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midranks_average_ties() {
        let (r, t) = midranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(t, 6.0);
    }

    #[test]
    fn identical_samples_are_centred() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let mw = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(mw.u, 12.5);
        assert!(mw.p_value > 0.99);
    }

    #[test]
    fn separated_samples() {
        let a: Vec<f64> = (0..30).map(f64::from).collect();
        let b: Vec<f64> = (100..130).map(f64::from).collect();
        let mw = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(mw.u, 0.0);
        assert!(mw.p_value < 1e-4);
    }

    #[test]
    fn exact_counts_total() {
        let c = exact_u_counts(4, 4);
        assert_eq!(c.len(), 17);
        assert_eq!(c.iter().sum::<f64>(), 70.0);
        assert_eq!(c[0], 1.0);
        assert_eq!(c[8], 8.0);
        let p = mann_whitney_u(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0]).unwrap().p_value;
        assert!((p - 2.0 / 70.0).abs() < 1e-12);
    }

    #[test]
    fn u_plus_u_prime() {
        let a = [1.0, 2.0, 2.0, 5.0, 7.0];
        let b = [2.0, 3.0, 5.0, 5.0];
        let u = mann_whitney_u(&a, &b).unwrap().u;
        let u2 = mann_whitney_u(&b, &a).unwrap().u;
        assert_eq!(u + u2, 20.0);
    }

    #[test]
    fn degenerate_and_small_inputs() {
        assert_eq!(
            mann_whitney_u(&[1.0, 1.0], &[1.0, 1.0]).unwrap_err(),
            RankTestError::Degenerate
        );
        assert!(matches!(mann_whitney_u(&[1.0], &[1.0, 2.0]), Err(RankTestError::TooFewValues { .. })));
        assert_eq!(
            kruskal_wallis(&[&[2.0, 2.0], &[2.0, 2.0]]).unwrap_err(),
            RankTestError::Degenerate
        );
        assert_eq!(kruskal_wallis(&[&[1.0, 2.0]]).unwrap_err(), RankTestError::TooFewGroups);
    }

    #[test]
    fn spearman_monotone() {
        let a: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        assert!((spearman(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((spearman(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&a, &vec![1.0; 20]).unwrap_err(), RankTestError::Degenerate);
    }
}
