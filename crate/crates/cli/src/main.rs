use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use docausal::dag::parse_dag;
use docausal::pipeline::cache::Cache;
use docausal::pipeline::{
    self, analysis_table, load_dag, load_data, AtStage, ErrorKind, MissingMode, PipelineConfig, PipelineError,
    Prepared, Stage,
};
use docausal::sensitivity::e_value;

const EXIT_VALIDATION: u8 = 1;
const EXIT_COMPUTATION: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "docausal", version, about = "Causal effect estimation pipeline for cohort data")]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the master seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the missing-data handling of the configuration.
    #[arg(long, global = true, value_parser = ["impute", "complete-case"])]
    missing: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a graph and, with a configuration, check back-door identification.
    ValidateDag {
        /// Graph file; defaults to the configuration's graph.
        #[arg(long)]
        dag: Option<PathBuf>,
    },
    /// Partial-correlation tests of the graph's conditional independencies.
    TestImplications,
    /// G-computation ACE with bootstrap interval and dose-response curve.
    Estimate,
    /// Permutation and placebo refutations.
    Refute,
    /// R- and T-learner effect heterogeneity with subgroup summaries.
    Cate,
    /// E-value of a risk ratio, or the E-value section of the configured analysis.
    Evalue {
        #[arg(long)]
        rr: Option<f64>,
    },
    /// Full analysis: report.json plus tables/*.csv.
    Report,
}

enum Failure {
    Usage(String),
    Pipeline(PipelineError),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Pipeline(e)
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::Usage("--config is required for this subcommand".into()))?;
    let mut cfg = PipelineConfig::from_file(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(m) = &cli.missing {
        cfg.missing = m.parse::<MissingMode>().map_err(Failure::Usage)?;
    }
    Ok(cfg)
}

/// Prepared inputs, reusing the cached analysis table when the
/// configuration and inputs are unchanged.
fn prepare_cached(cfg: &PipelineConfig, cache: &Cache) -> Result<Prepared, PipelineError> {
    cfg.validate()?;
    let dag = load_dag(cfg)?;
    cfg.spec.identify(&dag).at(Stage::Identify)?;
    let raw = load_data(cfg)?;
    let analysis = match cache.load_table("analysis", &raw) {
        Some(t) => t,
        None => {
            let t = analysis_table(cfg, &raw)?;
            cache.store_table("analysis", &t)?;
            t
        }
    };
    Prepared::new(cfg, dag, raw, analysis)
}

fn write_json<T: serde::Serialize>(out: &Path, name: &str, value: &T) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out).at(Stage::Output)?;
    let text = serde_json::to_string_pretty(value).expect("section serializes");
    std::fs::write(out.join(name), text).at(Stage::Output)
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn ace_section(cfg: &PipelineConfig, p: &Prepared, cache: &Cache) -> Result<pipeline::AceSection, PipelineError> {
    if let Some(a) = cache.load("ace") {
        return Ok(a);
    }
    let a = pipeline::ace(cfg, p)?;
    cache.store("ace", &a)?;
    Ok(a)
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::ValidateDag { dag } => {
            let cfg = match (&cli.config, dag) {
                (Some(_), _) => Some(load_config(cli)?),
                (None, None) => return Err(Failure::Usage("validate-dag needs --dag or --config".into())),
                (None, Some(_)) => None,
            };
            let graph = match dag {
                Some(path) => {
                    let text = std::fs::read_to_string(path).at(Stage::Identify)?;
                    parse_dag(&text).at(Stage::Identify)?
                }
                None => load_dag(cfg.as_ref().expect("config present"))?,
            };
            println!("graph ok: {} nodes, {} edges", graph.nodes().len(), graph.edges().len());
            if let Some(cfg) = cfg {
                cfg.spec.identify(&graph).at(Stage::Identify)?;
                println!(
                    "adjustment set {{{}}} satisfies the back-door criterion for {} -> {}",
                    cfg.spec.adjustment.join(", "),
                    cfg.spec.treatment,
                    cfg.spec.outcome
                );
            }
        }
        Command::TestImplications => {
            let cfg = load_config(cli)?;
            let cache = Cache::open(&cli.out.join("cache"), &cfg)?;
            let p = prepare_cached(&cfg, &cache)?;
            let s = pipeline::dag_tests(&cfg, &p)?;
            write_json(&cli.out, "dag_tests.json", &s)?;
            println!("x\ty\tcond\tr\tp\tverdict");
            for t in &s.tests {
                let verdict = match (t.independent, t.expect_dependent) {
                    (true, false) => "PASS",
                    (false, true) => "FAIL (expected)",
                    (false, false) => "FAIL",
                    (true, true) => "PASS (dependence expected)",
                };
                println!("{}\t{}\t{{{}}}\t{:+.3}\t{:.3}\t{verdict}", t.x, t.y, t.cond.join(","), t.r, t.p_value);
            }
            for sk in &s.skipped {
                println!("{}\t{}\t{{{}}}\tskipped: {}", sk.x, sk.y, sk.cond.join(","), sk.reason);
            }
        }
        Command::Estimate => {
            let cfg = load_config(cli)?;
            let cache = Cache::open(&cli.out.join("cache"), &cfg)?;
            let p = prepare_cached(&cfg, &cache)?;
            let a = ace_section(&cfg, &p, &cache)?;
            write_json(&cli.out, "ace.json", &a)?;
            let c = &a.contrast;
            println!("risk under do({} = {:.1}): {}", cfg.spec.treatment, c.s1, pct(c.risk_high));
            println!("risk under do({} = {:.1}): {}", cfg.spec.treatment, c.s0, pct(c.risk_low));
            println!("ACE {} (95% CI {} to {}), RRR {}", pct(c.ace), pct(c.ci_low), pct(c.ci_high), pct(c.rrr));
            println!("risk ratio {:.3}", a.risk_ratio);
        }
        Command::Refute => {
            let cfg = load_config(cli)?;
            let cache = Cache::open(&cli.out.join("cache"), &cfg)?;
            let p = prepare_cached(&cfg, &cache)?;
            let r = pipeline::refutation(&cfg, &p)?;
            write_json(&cli.out, "refutation.json", &r)?;
            let perm = &r.permutation;
            println!(
                "permutation: observed ACE {}, null mean {:.6} (sd {:.6}), p = {:.4}",
                pct(perm.observed_ace),
                perm.null_mean,
                perm.null_sd,
                perm.p_value
            );
            for o in &r.placebos {
                let t = &o.test;
                let verdict = if o.pre_specified_invalid {
                    "reported only"
                } else if t.passed {
                    "passed"
                } else {
                    "failed"
                };
                println!(
                    "placebo {} -> {}: coef {:.6} [{:.6}, {:.6}], p = {:.3}, {verdict}",
                    t.instrument, t.target, t.coefficient, t.ci_low, t.ci_high, t.p_value
                );
            }
        }
        Command::Cate => {
            let cfg = load_config(cli)?;
            let cache = Cache::open(&cli.out.join("cache"), &cfg)?;
            let p = prepare_cached(&cfg, &cache)?;
            let c = pipeline::cate(&cfg, &p)?;
            write_json(&cli.out, "cate.json", &c)?;
            println!(
                "R-learner mean tau {:.5} over {} rows ({} excluded), implied ARR {}",
                c.r_learner.mean,
                c.r_learner.n,
                c.n_excluded,
                pct(c.implied_arr)
            );
            println!("Spearman(R, T) = {:.3}", c.spearman_r_t);
            for g in &c.subgroups {
                for s in &g.strata {
                    let m = &s.summary;
                    println!(
                        "{} {}: n {}, tau {:.5}, ARR {} [{}, {}]{}",
                        g.name,
                        m.label,
                        m.n,
                        m.mean_tau,
                        pct(m.implied_arr),
                        pct(m.ci_low),
                        pct(m.ci_high),
                        if s.underpowered { " (underpowered)" } else { "" }
                    );
                }
            }
        }
        Command::Evalue { rr: Some(rr) } => {
            let e = e_value(*rr).map_err(|e| Failure::Usage(e.to_string()))?;
            println!("{e:.2}");
        }
        Command::Evalue { rr: None } => {
            let cfg = load_config(cli)?;
            let cache = Cache::open(&cli.out.join("cache"), &cfg)?;
            let p = prepare_cached(&cfg, &cache)?;
            let a = ace_section(&cfg, &p, &cache)?;
            let s = pipeline::sensitivity(&cfg, &p, &a.contrast)?;
            write_json(&cli.out, "sensitivity.json", &s)?;
            println!("risk ratio {:.3}: E-value {:.2} (CI {:.2})", s.risk_ratio, s.e_point, s.e_ci);
            for r in &s.table {
                println!(
                    "-{} : ACE {}, RR {:.3}, E-value {:.2} (CI {:.2})",
                    r.intervention_mmhg,
                    pct(r.ace),
                    r.risk_ratio,
                    r.e_point,
                    r.e_ci
                );
            }
        }
        Command::Report => {
            let cfg = load_config(cli)?;
            let cache = Cache::open(&cli.out.join("cache"), &cfg)?;
            let p = prepare_cached(&cfg, &cache)?;
            let report = pipeline::run_prepared(&cfg, &p)?;
            pipeline::write_report(&report, &cli.out)?;
            println!("wrote {}", cli.out.join("report.json").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e}");
            match e.kind() {
                ErrorKind::Validation => ExitCode::from(EXIT_VALIDATION),
                ErrorKind::Computation => ExitCode::from(EXIT_COMPUTATION),
            }
        }
    }
}
