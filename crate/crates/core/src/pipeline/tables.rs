//! Plot-ready CSV side tables derived from a report.

use std::path::Path;

use super::{Report, StageError};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<std::fs::File>, StageError> {
    Ok(csv::Writer::from_path(dir.join(name))?)
}

/// Writes `dose_response`, `balance`, `subgroups`, `permutation_null`,
/// `evalues`, `implications`, `baseline` and (when present)
/// `odds_ratios` tables into `dir`.
pub fn write_tables(report: &Report, dir: &Path) -> Result<(), StageError> {
    std::fs::create_dir_all(dir)?;

    let mut w = writer(dir, "dose_response.csv")?;
    w.write_record(["s", "interventional_risk", "observational_risk"])?;
    for (d, o) in report.ace.dose_response.iter().zip(&report.triangulation.observational_curve) {
        w.write_record([d.s.to_string(), d.risk.to_string(), o.risk.to_string()])?;
    }
    w.flush()?;

    let mut w = writer(dir, "balance.csv")?;
    w.write_record(["variable", "smd_before", "smd_after"])?;
    for b in &report.triangulation.psm.balance {
        w.write_record([b.variable.clone(), opt(b.smd_before), opt(b.smd_after)])?;
    }
    w.flush()?;

    let mut w = writer(dir, "subgroups.csv")?;
    w.write_record([
        "subgroup", "label", "n", "mean_tau", "implied_arr", "ci_low", "ci_high", "test", "test_p", "tau_sd", "mde",
        "underpowered",
    ])?;
    for table in &report.cate.subgroups {
        for s in &table.strata {
            let m = &s.summary;
            let test = m.test.map(|t| format!("{t:?}")).unwrap_or_default();
            w.write_record([
                table.name.clone(),
                m.label.clone(),
                m.n.to_string(),
                m.mean_tau.to_string(),
                m.implied_arr.to_string(),
                m.ci_low.to_string(),
                m.ci_high.to_string(),
                test,
                opt(m.test_p),
                s.tau_sd.to_string(),
                opt(s.mde),
                s.underpowered.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut w = writer(dir, "permutation_null.csv")?;
    w.write_record(["index", "ace"])?;
    for (i, v) in report.refutation.permutation.null_samples.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;

    let mut w = writer(dir, "evalues.csv")?;
    w.write_record([
        "intervention", "ace", "ace_ci_low", "ace_ci_high", "risk_ratio", "risk_ratio_ci", "e_point", "e_ci",
    ])?;
    for r in &report.sensitivity.table {
        w.write_record(
            [
                r.intervention_mmhg,
                r.ace,
                r.ace_ci_low,
                r.ace_ci_high,
                r.risk_ratio,
                r.risk_ratio_ci,
                r.e_point,
                r.e_ci,
            ]
            .map(|v| v.to_string()),
        )?;
    }
    w.flush()?;

    let mut w = writer(dir, "implications.csv")?;
    w.write_record(["x", "y", "cond", "r", "p_value", "n", "d_separated", "expect_dependent", "independent", "consistent"])?;
    for t in &report.dag_tests.tests {
        w.write_record([
            t.x.clone(),
            t.y.clone(),
            t.cond.join(" "),
            t.r.to_string(),
            t.p_value.to_string(),
            t.n.to_string(),
            t.d_separated.to_string(),
            t.expect_dependent.to_string(),
            t.independent.to_string(),
            t.consistent.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = writer(dir, "baseline.csv")?;
    w.write_record(["variable", "overall", "group0", "group1", "test", "p_value"])?;
    for r in &report.baseline.rows {
        w.write_record([
            r.variable.clone(),
            r.overall.to_string(),
            r.group0.to_string(),
            r.group1.to_string(),
            format!("{:?}", r.test),
            opt(r.p_value),
        ])?;
    }
    w.flush()?;

    if let Some(obs) = &report.observational_model {
        let mut w = writer(dir, "odds_ratios.csv")?;
        w.write_record(["variable", "coefficient", "std_error", "odds_ratio", "ci_low", "ci_high", "p_value"])?;
        for r in &obs.rows {
            w.write_record([
                r.variable.clone(),
                r.coefficient.to_string(),
                r.std_error.to_string(),
                r.odds_ratio.to_string(),
                r.ci_low.to_string(),
                r.ci_high.to_string(),
                r.p_value.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}
