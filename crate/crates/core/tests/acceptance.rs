//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//!
//! Criteria 1-9 run on synthetic data. Criteria 10-14 need the public-use
//! Framingham CSV; point `FRAMINGHAM_CSV` at it to enable them.

mod common;

use std::time::Instant;

use common::{
    all_dags, build_dag, d_separated_by_paths, exact_mann_whitney, grid_search_mle, standardization, workspace_path,
    NAMES,
};
use docausal::cate::rank::{kruskal_wallis, mann_whitney_u};
use docausal::cate::{r_learner, CovariateSet, RLearnerConfig};
use docausal::dataset::{Column, ColumnKind, Table};
use docausal::effects::{
    binarize_at_median, gcomp_ace, gcomp_interventional_risk, ipw_ate, psm_att, CausalModelSpec, IpwOptions,
    PsmOptions,
};
use docausal::pipeline::{run, DataSource, PipelineConfig, Report};
use docausal::refute::permutation_refute;
use docausal::regress::{
    augment, logistic_fit, logistic_fit_traced, logistic_log_likelihood, logistic_score, Intercept, LogisticOptions,
};
use docausal::resample::mean;
use docausal::sensitivity::e_value;
use docausal::synth::{generate, mc_interventional_risk, reference_scm, ScmSpec, REFERENCE_SYSBP_EFFECT};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn reference_spec() -> CausalModelSpec {
    CausalModelSpec::new("SYSBP", "CHD", &["AGE", "SEX_MALE", "BMI", "CURSMOKE"], &[])
}

fn d_separation_oracle() -> Outcome {
    let mut queries = 0usize;
    let mut dags = 0usize;
    for n in 2..=5 {
        for edges in all_dags(n) {
            dags += 1;
            let dag = build_dag(n, &edges);
            for x in 0..n {
                for y in 0..n {
                    if x == y {
                        continue;
                    }
                    let rest: Vec<usize> = (0..n).filter(|v| *v != x && *v != y).collect();
                    for mask in 0..(1u32 << rest.len()) {
                        let mut cond = vec![false; n];
                        let mut names = Vec::new();
                        for (k, &v) in rest.iter().enumerate() {
                            if mask & (1 << k) != 0 {
                                cond[v] = true;
                                names.push(NAMES[v]);
                            }
                        }
                        queries += 1;
                        let got = dag.d_separated(NAMES[x], NAMES[y], &names).map_err(|e| e.to_string())?;
                        if got != d_separated_by_paths(n, &edges, x, y, &cond) {
                            return Err(format!("disagreement on {edges:?}: {x} vs {y} given {names:?}"));
                        }
                    }
                }
            }
        }
    }
    Ok(format!("{queries} queries over {dags} DAGs agree"))
}

fn gcomp_vs_oracle() -> Outcome {
    let scm = reference_scm(REFERENCE_SYSBP_EFFECT);
    let data = generate(&scm, 20_000, 101).map_err(|e| e.to_string())?;
    let spec = reference_spec();
    let mc = |s: f64, seed: u64| mc_interventional_risk(&scm, "SYSBP", s, "CHD", 500_000, seed).map(|o| o.risk);
    let mut worst: f64 = 0.0;
    for (k, s) in [110.0, 120.0, 130.0, 140.0, 150.0].into_iter().enumerate() {
        let est = gcomp_interventional_risk(&data, &spec, s).map_err(|e| e.to_string())?;
        let oracle = mc(s, 200 + k as u64).map_err(|e| e.to_string())?;
        worst = worst.max((est - oracle).abs());
    }
    let s1 = mean(data.values("SYSBP").unwrap());
    let s0 = s1 - 20.0;
    let est = gcomp_ace(&data, &spec, s1, s0, 200, 7).map_err(|e| e.to_string())?;
    let oracle = mc(s1, 300).map_err(|e| e.to_string())? - mc(s0, 301).map_err(|e| e.to_string())?;
    let ace_err = (est.ace - oracle).abs();
    check(
        worst < 0.005 && ace_err < 0.005,
        format!("max risk error {:.2} pp over 5 points, ACE error {:.2} pp", 100.0 * worst, 100.0 * ace_err),
    )
}

// Smaller than the headline sizes so 100 replications fit the runtime
// budget; the coverage targets are unchanged.
const NULL_N: usize = 2000;
const NULL_BOOT: usize = 200;
const NULL_PERM: usize = 200;

/// The reference SCM with the SYSBP term folded into the CHD intercept at
/// the mean SYSBP, so the outcome rate stays near the effect model's.
fn null_reference_scm() -> Result<ScmSpec, String> {
    let effect = reference_scm(REFERENCE_SYSBP_EFFECT);
    let big = generate(&effect, 200_000, 4999).map_err(|e| e.to_string())?;
    let sysbp = mean(big.values("SYSBP").unwrap());
    let mut scm = reference_scm(0.0);
    let chd = scm.variables.iter_mut().find(|v| v.name == "CHD").ok_or("reference SCM has no CHD")?;
    chd.intercept += REFERENCE_SYSBP_EFFECT * sysbp;
    Ok(scm)
}

fn null_calibration() -> Outcome {
    let scm = null_reference_scm()?;
    let spec = reference_spec();
    let (mut covered, mut perm_ok) = (0, 0);
    for seed in 0..100u64 {
        let data = generate(&scm, NULL_N, 5000 + seed).map_err(|e| e.to_string())?;
        let s1 = mean(data.values("SYSBP").unwrap());
        let a = gcomp_ace(&data, &spec, s1, s1 - 20.0, NULL_BOOT, seed).map_err(|e| e.to_string())?;
        if a.ci_low <= 0.0 && 0.0 <= a.ci_high {
            covered += 1;
        }
        let p = permutation_refute(&data, &spec, s1, s1 - 20.0, NULL_PERM, seed + 1).map_err(|e| e.to_string())?;
        if p.p_value > 0.05 {
            perm_ok += 1;
        }
    }
    check(
        covered >= 90 && perm_ok >= 90,
        format!("CI covers 0 in {covered}/100, permutation p > 0.05 in {perm_ok}/100 (n = {NULL_N}, {NULL_BOOT} resamples, {NULL_PERM} permutations)"),
    )
}

fn triangulation() -> Outcome {
    let scm = reference_scm(REFERENCE_SYSBP_EFFECT);
    let data = generate(&scm, 20_000, 404).map_err(|e| e.to_string())?;
    let spec = reference_spec();
    let s1 = mean(data.values("SYSBP").unwrap());
    let g = gcomp_ace(&data, &spec, s1, s1 - 20.0, 200, 1).map_err(|e| e.to_string())?;
    let ipw = ipw_ate(&data, &spec, &IpwOptions { n_boot: 200, ..IpwOptions::default() }, 2).map_err(|e| e.to_string())?;
    let psm = psm_att(&data, &spec, &PsmOptions { n_boot: 200, ..PsmOptions::default() }, 3).map_err(|e| e.to_string())?;
    let worst_smd = psm
        .balance
        .iter()
        .map(|b| b.smd_after.map_or(f64::INFINITY, f64::abs))
        .fold(0.0, f64::max);
    // informational only: balance at a tighter caliper
    let tight = psm_att(&data, &spec, &PsmOptions { caliper: 0.01, n_boot: 1, ..PsmOptions::default() }, 3)
        .map_err(|e| e.to_string())?;
    let tight_smd = tight.balance.iter().map(|b| b.smd_after.map_or(f64::INFINITY, f64::abs)).fold(0.0, f64::max);

    // discrete confounder: IPW against exact standardization
    let disc = common::scm(vec![
        common::bern("Z", 0.2, &[]),
        common::gauss("T", 120.0, 15.0, &[("Z", 12.0)]),
        common::bern("Y", -5.0, &[("T", 0.02), ("Z", 0.8)]),
    ]);
    let dd = generate(&disc, 20_000, 405).map_err(|e| e.to_string())?;
    let dspec = CausalModelSpec::new("T", "Y", &["Z"], &[]);
    let (_, tb) = binarize_at_median(dd.values("T").unwrap());
    let oracle = standardization(dd.values("Z").unwrap(), &tb, dd.values("Y").unwrap());
    let dipw = ipw_ate(&dd, &dspec, &IpwOptions { n_boot: 100, ..IpwOptions::default() }, 4).map_err(|e| e.to_string())?;
    let ipw_err = (dipw.ate - oracle).abs();

    check(
        g.ace > 0.0 && ipw.ate > 0.0 && psm.att > 0.0 && worst_smd < 0.1 && ipw_err < 0.003,
        format!(
            "gcomp {:.2} pp, IPW {:.2} pp, PSM ATT {:.2} pp, max post-match |SMD| {worst_smd:.3} (caliper 0.01 would give {tight_smd:.3}), IPW vs standardization {:.2} pp",
            100.0 * g.ace,
            100.0 * ipw.ate,
            100.0 * psm.att,
            100.0 * ipw_err
        ),
    )
}

fn logistic_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut grid_err: f64 = 0.0;
    for _ in 0..5 {
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut y: Vec<f64> = x.iter().map(|v| f64::from(rng.random::<f64>() < 1.0 / (1.0 + (-v).exp()))).collect();
        // keep the data overlapping so the MLE exists
        y[0] = 1.0 - f64::from(x[0] > 0.0);
        y[1] = f64::from(x[1] > 0.0);
        let ord: Vec<f64> = {
            let mut idx: Vec<usize> = (0..8).collect();
            idx.sort_by(|a, b| x[*a].total_cmp(&x[*b]));
            idx.iter().map(|&i| y[i]).collect()
        };
        if ord.windows(2).filter(|w| w[0] != w[1]).count() < 2 {
            continue;
        }
        let fit = logistic_fit(&DMatrix::from_column_slice(8, 1, &x), &y, &LogisticOptions::default())
            .map_err(|e| e.to_string())?;
        let (b0, b1) = grid_search_mle(&x, &y, (fit.coefficients[0].round(), fit.coefficients[1].round()), 5.0);
        grid_err = grid_err.max((fit.coefficients[0] - b0).abs()).max((fit.coefficients[1] - b1).abs());
    }

    let mut monotone = true;
    let mut fd_err: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 300;
        let x: DMatrix<f64> = DMatrix::from_fn(n, 3, |_, _| StandardNormal.sample(&mut rng));
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let eta: f64 = 0.3 + x[(i, 0)] - 0.8 * x[(i, 1)] + 0.4 * x[(i, 2)];
                f64::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp()))
            })
            .collect();
        let (_, trace) = logistic_fit_traced(&x, &y, &LogisticOptions::default()).map_err(|e| e.to_string())?;
        monotone &= trace.windows(2).all(|w| w[1] >= w[0]);

        let xa = augment(&x, Intercept::Include);
        let beta: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let score = logistic_score(&xa, &y, &beta);
        for j in 0..4 {
            let h = 1e-5;
            let (mut up, mut dn) = (beta.clone(), beta.clone());
            up[j] += h;
            dn[j] -= h;
            let fd = (logistic_log_likelihood(&xa, &y, &up) - logistic_log_likelihood(&xa, &y, &dn)) / (2.0 * h);
            fd_err = fd_err.max((fd - score[j]).abs() / score[j].abs().max(1.0));
        }
    }
    check(
        grid_err < 1e-4 && monotone && fd_err < 1e-5,
        format!("grid-search gap {grid_err:.1e}, IRLS monotone: {monotone}, score vs finite difference {fd_err:.1e} relative"),
    )
}

fn e_value_properties() -> Outcome {
    let e = e_value(1.317).map_err(|e| e.to_string())?;
    let one = e_value(1.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut rr: Vec<f64> = (0..10_000).map(|_| 10f64.powf(rng.random_range(0.0..2.0))).collect();
    rr.sort_by(f64::total_cmp);
    let ev: Vec<f64> = rr.iter().map(|r| e_value(*r).unwrap()).collect();
    let monotone = ev.windows(2).all(|w| w[1] >= w[0]);
    let symmetric = rr.iter().zip(&ev).all(|(r, e)| (e_value(1.0 / r).unwrap() - e).abs() <= 1e-9 * e);
    check(
        (e - 1.96).abs() <= 0.01 && one == 1.0 && monotone && symmetric,
        format!("e_value(1.317) = {e:.3}, e_value(1) = {one}, monotone: {monotone}, reciprocal-symmetric: {symmetric}"),
    )
}

/// Linear-probability outcome with a constant per-unit effect `tau`.
fn constant_effect_table(tau: f64, seed: u64) -> Table {
    let n = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut z1, mut z2, mut t, mut y) = (vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b = f64::from(rng.random::<bool>());
        let e: f64 = StandardNormal.sample(&mut rng);
        let ti = 130.0 + 8.0 * a + 4.0 * b + 25.0 * e;
        let p = (0.35 + tau * (ti - 130.0) + 0.03 * a + 0.02 * b).clamp(0.0, 1.0);
        z1.push(a);
        z2.push(b);
        t.push(ti);
        y.push(f64::from(rng.random::<f64>() < p));
    }
    Table::new(vec![
        Column::complete("Z1", ColumnKind::Continuous, z1),
        Column::complete("Z2", ColumnKind::Binary, z2),
        Column::complete("T", ColumnKind::Continuous, t),
        Column::complete("Y", ColumnKind::Binary, y),
    ])
    .unwrap()
}

fn r_learner_recovery() -> Outcome {
    let spec = CausalModelSpec::new("T", "Y", &["Z1", "Z2"], &[]);
    let cfg = RLearnerConfig {
        covariates: CovariateSet::Adjustment,
        ..RLearnerConfig::default()
    };
    let mut means = Vec::new();
    let mut exact = true;
    for (tau, seed) in [(0.002, 71), (0.0, 72)] {
        let data = constant_effect_table(tau, seed);
        let est = r_learner(&data, &spec, &cfg, seed).map_err(|e| e.to_string())?;
        means.push(mean(&est.included_tau()));
        let d = est.diagnostics.as_ref().ok_or("missing diagnostics")?;
        let (t, y) = (data.values("T").unwrap(), data.values("Y").unwrap());
        let mut raw = Vec::new();
        for i in 0..t.len() {
            let r = t[i] - d.e_hat[i];
            exact &= est.included[i] == (r.abs() > cfg.residual_threshold);
            exact &= est.included[i] == d.pseudo[i].is_some();
            if est.included[i] {
                raw.push((y[i] - d.m_hat[i]) / r);
            }
        }
        exact &= (d.clip_low, d.clip_high)
            == (
                docausal::resample::percentile(&raw, cfg.clip_percentiles.0),
                docausal::resample::percentile(&raw, cfg.clip_percentiles.1),
            );
        exact &= raw
            .iter()
            .zip(d.pseudo.iter().flatten())
            .all(|(v, p)| *p == v.clamp(d.clip_low, d.clip_high));
        exact &= raw.iter().any(|v| *v < d.clip_low) && raw.iter().any(|v| *v > d.clip_high);
    }
    check(
        (means[0] - 0.002).abs() < 0.0005 && means[1].abs() < 0.0005 && exact,
        format!("mean tau {:.5} (true 0.002) and {:.5} (true 0), filter/clip exact: {exact}", means[0], means[1]),
    )
}

fn rank_oracles() -> Outcome {
    let mut worst: f64 = 0.0;
    for mask in 0u32..256 {
        if mask.count_ones() != 4 {
            continue;
        }
        let a: Vec<f64> = (0..8).filter(|k| mask & (1 << k) != 0).map(|k| f64::from(k + 1)).collect();
        let b: Vec<f64> = (0..8).filter(|k| mask & (1 << k) == 0).map(|k| f64::from(k + 1)).collect();
        let p = mann_whitney_u(&a, &b).map_err(|e| e.to_string())?.p_value;
        worst = worst.max((p - exact_mann_whitney(&a, &b)).abs());
    }
    let mut kw_gap: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..25).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..30).map(|_| 0.5 + Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        let kw = kruskal_wallis(&[&a, &b]).map_err(|e| e.to_string())?.p_value;
        let mw = mann_whitney_u(&a, &b).map_err(|e| e.to_string())?.p_value;
        kw_gap = kw_gap.max((kw - mw).abs());
    }
    check(
        worst < 0.02 && kw_gap < 0.02,
        format!("4+4 exact gap {worst:.4} over 70 assignments, Kruskal-Wallis vs Mann-Whitney gap {kw_gap:.4}"),
    )
}

fn determinism() -> Outcome {
    let cfg = PipelineConfig::from_file(&workspace_path("configs/synthetic.json")).map_err(|e| e.to_string())?;
    if cfg.seed != 42 {
        return Err(format!("shipped synthetic config uses seed {}", cfg.seed));
    }
    let a = run(&cfg).map_err(|e| e.to_string())?.canonical_json();
    let b = run(&cfg).map_err(|e| e.to_string())?.canonical_json();
    check(a == b, format!("two seed-42 reports, {} bytes each, identical: {}", a.len(), a == b))
}

fn framingham_report(csv: &str) -> Result<Report, String> {
    let mut cfg = PipelineConfig::from_file(&workspace_path("configs/framingham.json")).map_err(|e| e.to_string())?;
    match &mut cfg.data {
        DataSource::Csv { path, .. } => *path = csv.into(),
        DataSource::Synthetic { .. } => return Err("framingham config is not CSV-backed".into()),
    }
    run(&cfg).map_err(|e| e.to_string())
}

fn within(v: f64, target: f64, tol: f64) -> bool {
    (v - target).abs() <= tol
}

fn cohort_counts(r: &Report) -> Outcome {
    let b = &r.baseline;
    check(
        b.n_complete_cases == 3776 && b.n_complete_case_events == 574,
        format!("complete cases {} with {} events", b.n_complete_cases, b.n_complete_case_events),
    )
}

fn framingham_ace(r: &Report) -> Outcome {
    let c = &r.ace.contrast;
    check(
        within(c.ace, 0.0340, 0.0015) && within(c.ci_low, 0.0264, 0.003) && within(c.ci_high, 0.0414, 0.003),
        format!("ACE {:.2}% [{:.2}%, {:.2}%]", 100.0 * c.ace, 100.0 * c.ci_low, 100.0 * c.ci_high),
    )
}

fn framingham_implications(r: &Report) -> Outcome {
    let targets = [
        ("SEX_MALE", "GLUCOSE", -0.007),
        ("BPMEDS", "TOTCHOL", 0.023),
        ("BPMEDS", "GLUCOSE", 0.012),
        ("AGE", "BPMEDS", 0.025),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (x, y, target) in targets {
        match r.dag_tests.tests.iter().find(|t| t.x == x && t.y == y) {
            Some(t) => {
                ok &= within(t.r, target, 0.005) && t.independent;
                detail.push(format!("{x}/{y} r = {:+.3} p = {:.3}", t.r, t.p_value));
            }
            None => {
                ok = false;
                detail.push(format!("{x}/{y} missing"));
            }
        }
    }
    check(ok, detail.join(", "))
}

fn framingham_risks(r: &Report) -> Outcome {
    let c = &r.ace.contrast;
    let s = &r.sensitivity;
    let targets = [(20.0, 1.96), (15.0, 1.74), (10.0, 1.53)];
    let mut ok = within(c.risk_high, 0.1411, 0.002) && within(c.risk_low, 0.1071, 0.002);
    ok &= within(r.ace.risk_ratio, 1.317, 0.005);
    let mut es = Vec::new();
    for (delta, target) in targets {
        match s.table.iter().find(|row| row.intervention_mmhg == delta) {
            Some(row) => {
                ok &= within(row.e_point, target, 0.02);
                es.push(format!("{:.2}", row.e_point));
            }
            None => {
                ok = false;
                es.push("missing".into());
            }
        }
    }
    check(
        ok,
        format!(
            "risks {:.2}% / {:.2}%, RR {:.3}, E-values {}",
            100.0 * c.risk_high,
            100.0 * c.risk_low,
            r.ace.risk_ratio,
            es.join(" / ")
        ),
    )
}

fn framingham_triangulation(r: &Report) -> Outcome {
    let ace = r.ace.contrast.ace;
    let att = r.triangulation.psm.att;
    let ate = r.triangulation.ipw.ate;
    let auroc = r.observational_model.as_ref().map_or(f64::NAN, |o| o.cv_auroc_mean);
    check(
        att < ate && att > ace && ate > ace && att > 0.0 && within(auroc, 0.721, 0.01),
        format!(
            "ACE {:.2}%, PSM ATT {:.2}%, IPW ATE {:.2}%, cross-validated AUROC {auroc:.3}",
            100.0 * ace,
            100.0 * att,
            100.0 * ate
        ),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, outcome: Option<Outcome>, seconds: f64| {
        let (tag, detail) = match outcome {
            Some(Ok(d)) => ("PASS", d),
            Some(Err(d)) => {
                failed += 1;
                ("FAIL", d)
            }
            None => ("SKIP", "FRAMINGHAM_CSV not set".to_string()),
        };
        println!("[{id:>2}] {tag} {name}: {detail} ({seconds:.1}s)");
    };

    let synthetic: [(&str, fn() -> Outcome); 9] = [
        ("d-separation vs path enumeration", d_separation_oracle),
        ("g-computation vs Monte-Carlo oracle", gcomp_vs_oracle),
        ("null calibration", null_calibration),
        ("estimator triangulation", triangulation),
        ("logistic MLE oracles", logistic_oracles),
        ("E-value formula", e_value_properties),
        ("R-learner recovery", r_learner_recovery),
        ("rank-test oracles", rank_oracles),
        ("determinism", determinism),
    ];
    for (k, (name, f)) in synthetic.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        report(k + 1, name, Some(outcome), start.elapsed().as_secs_f64());
    }

    let data_criteria: [(&str, fn(&Report) -> Outcome); 5] = [
        ("cohort counts", cohort_counts),
        ("Framingham ACE", framingham_ace),
        ("implication partial correlations", framingham_implications),
        ("interventional risks and E-values", framingham_risks),
        ("PSM/IPW ordering and AUROC", framingham_triangulation),
    ];
    match std::env::var("FRAMINGHAM_CSV") {
        Ok(csv) => {
            let start = Instant::now();
            let result = framingham_report(&csv);
            let seconds = start.elapsed().as_secs_f64();
            for (k, (name, f)) in data_criteria.iter().enumerate() {
                let outcome = match &result {
                    Ok(r) => f(r),
                    Err(e) => Err(format!("pipeline failed: {e}")),
                };
                report(k + 10, name, Some(outcome), if k == 0 { seconds } else { 0.0 });
            }
        }
        Err(_) => {
            for (k, (name, _)) in data_criteria.iter().enumerate() {
                report(k + 10, name, None, 0.0);
            }
        }
    }

    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
