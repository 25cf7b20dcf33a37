//! Argument parsing and dispatch for the `bkt` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::covariance::SigmaMethod;
use crate::error::{exit, BktError, Result};
use crate::io::{self, GridSpec, RunConfig, SuiteScenario, SuiteSpec};
use crate::jacobian::JacobianPolicy;
use crate::runner;
use crate::synth::{Family, ScenarioSpec};

#[derive(Debug, Parser)]
#[command(
    name = "bkt",
    version,
    about = "Bayesian kernel two-sample testing",
    after_help = "Environment: BKT_THREADS caps the worker pool.\n\
                  Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure."
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Joint posterior over the hypothesis and the kernel parameter.
    Test(TestArgs),
    /// Bayes factor at a fixed theta, or minimized over a grid.
    Bf(BfArgs),
    /// Generate a synthetic paired dataset as CSV.
    Synth(SynthArgs),
    /// Replicated sampling runs over synthetic scenarios.
    Experiment(ExperimentArgs),
    /// Run the oracle suite against the efficient implementation.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Number of evaluation points (even).
    #[arg(long)]
    s: Option<usize>,
    /// Covariance estimator for the witness.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    sigma_method: Option<u8>,
    /// Clamp tiny eigenvalues of J^T J instead of failing.
    #[arg(long)]
    clamp_jacobian: bool,
    /// Prior odds P(H1) / P(H0).
    #[arg(long)]
    prior_odds: Option<f64>,
    /// Seed for the evaluation points and the chain.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ChainArgs {
    /// Gibbs sweeps.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// HMC transitions per Gibbs sweep.
    #[arg(long)]
    hmc_steps: Option<usize>,
    /// Leapfrog steps per HMC trajectory.
    #[arg(long)]
    leapfrog: Option<usize>,
}

#[derive(Debug, Args)]
struct TestArgs {
    /// Paired CSV with header x1..xD,y1..yD; `-` reads standard input.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Configuration echoed by an earlier run (JSON or CSV artifact).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    chain: ChainArgs,
    /// Output directory for summary.json and samples.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BfArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    /// Fixed kernel parameter.
    #[arg(long, conflicts_with = "theta_grid")]
    theta: Option<f64>,
    /// Grid lo:hi:count; the smallest Bayes factor is reported.
    #[arg(long)]
    theta_grid: Option<String>,
    /// Output directory for bf.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Scenario family: gauss1d, laplace1d, copula_corr, mixture1d,
    /// gauss2d_rot, blobs2x2 or padded.
    #[arg(long)]
    family: Option<String>,
    /// Family parameter override KEY=VALUE (VALUE in JSON); repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Sample size.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Suite JSON with `scenarios`, `n` and `replicates`.
    #[arg(long, conflicts_with = "family")]
    suite: Option<PathBuf>,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Comma-separated sample sizes for a single-family suite.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    chain: ChainArgs,
    /// Output directory for experiment.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative error injected into the efficient path.
    #[arg(long, default_value_t = 0.0, hide = true)]
    perturb: f64,
}

fn base_config(verb: &str, path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let mut cfg = io::load_config(p)?;
            cfg.verb = verb.to_string();
            Ok(cfg)
        }
        None => Ok(RunConfig::new(verb)),
    }
}

fn apply_model(cfg: &mut RunConfig, m: &ModelArgs) -> Result<()> {
    if let Some(s) = m.s {
        cfg.s = s;
    }
    if let Some(k) = m.sigma_method {
        cfg.sigma_method = SigmaMethod::from_index(k)?;
    }
    if m.clamp_jacobian {
        cfg.jacobian = JacobianPolicy::Clamp;
    }
    if let Some(o) = m.prior_odds {
        cfg.chain.prior_odds = o;
    }
    if let Some(seed) = m.seed {
        cfg.chain.seed = seed;
    }
    Ok(())
}

fn apply_chain(cfg: &mut RunConfig, c: &ChainArgs) {
    let ch = &mut cfg.chain;
    for (field, value) in [
        (&mut ch.m_tilde, c.iters),
        (&mut ch.burnin, c.burnin),
        (&mut ch.thin, c.thin),
        (&mut ch.n_tilde, c.hmc_steps),
        (&mut ch.leapfrog_steps, c.leapfrog),
    ] {
        if let Some(v) = value {
            *field = v;
        }
    }
    // Keep the adaptive prefix valid when fewer HMC steps are requested.
    ch.warmup_inner = ch.warmup_inner.min(ch.n_tilde);
}

/// The defaults of `name` with `KEY=VALUE` overrides, each value read as
/// JSON (or as a bare string when it is not valid JSON).
pub fn family_with_params(name: &str, params: &[String]) -> Result<Family> {
    override_family(&Family::defaults(name)?, params)
}

fn override_family(base: &Family, params: &[String]) -> Result<Family> {
    let name = base.name();
    let mut value = serde_json::to_value(base)?;
    let obj = value.as_object_mut().expect("families serialize as objects");
    for p in params {
        let (key, raw) = p
            .split_once('=')
            .ok_or_else(|| BktError::Config(format!("--param expects KEY=VALUE, got '{p}'")))?;
        if key == "family" || !obj.contains_key(key) {
            let known: Vec<&str> = obj.keys().map(String::as_str).filter(|k| *k != "family").collect();
            return Err(BktError::Config(format!(
                "family {name} has no parameter '{key}' (known: {})",
                known.join(", ")
            )));
        }
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        obj.insert(key.to_string(), parsed);
    }
    serde_json::from_value(value).map_err(|e| BktError::Config(format!("family {name}: {e}")))
}

fn resolve_test(a: &TestArgs) -> Result<RunConfig> {
    let mut cfg = base_config("test", a.config.as_ref())?;
    if let Some(i) = &a.input {
        cfg.input = Some(i.clone());
    }
    apply_model(&mut cfg, &a.model)?;
    apply_chain(&mut cfg, &a.chain);
    if cfg.input.is_none() {
        return Err(BktError::Config("test needs --input".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_bf(a: &BfArgs) -> Result<RunConfig> {
    let mut cfg = base_config("bf", a.config.as_ref())?;
    if let Some(i) = &a.input {
        cfg.input = Some(i.clone());
    }
    apply_model(&mut cfg, &a.model)?;
    if let Some(t) = a.theta {
        cfg.theta = Some(t);
        cfg.theta_grid = None;
    }
    if let Some(g) = &a.theta_grid {
        cfg.theta_grid = Some(GridSpec::parse(g)?);
        cfg.theta = None;
    }
    if cfg.input.is_none() {
        return Err(BktError::Config("bf needs --input".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_synth(a: &SynthArgs) -> Result<RunConfig> {
    let mut cfg = base_config("synth", a.config.as_ref())?;
    let mut spec = match (&a.scenario.family, cfg.scenario.take()) {
        (Some(name), _) => ScenarioSpec { family: family_with_params(name, &a.scenario.params)?, n: 100, seed: 0 },
        (None, Some(spec)) => ScenarioSpec { family: override_family(&spec.family, &a.scenario.params)?, ..spec },
        (None, None) => return Err(BktError::Config("synth needs --family".into())),
    };
    if let Some(n) = a.n {
        spec.n = n;
    }
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    cfg.scenario = Some(spec);
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_experiment(a: &ExperimentArgs) -> Result<RunConfig> {
    let mut cfg = base_config("experiment", a.config.as_ref())?;
    if let Some(path) = &a.suite {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BktError::Input(format!("cannot read suite {}: {e}", path.display())))?;
        cfg.suite = Some(serde_json::from_str(&text).map_err(|e| BktError::Config(format!("suite: {e}")))?);
    } else if let Some(name) = &a.scenario.family {
        cfg.suite = Some(SuiteSpec {
            scenarios: vec![SuiteScenario {
                name: name.clone(),
                family: family_with_params(name, &a.scenario.params)?,
            }],
            n: if a.n.is_empty() { vec![100] } else { a.n.clone() },
            replicates: a.replicates.unwrap_or(20),
        });
    }
    let suite = cfg
        .suite
        .as_mut()
        .ok_or_else(|| BktError::Config("experiment needs --suite or --family".into()))?;
    if a.scenario.family.is_none() && !a.n.is_empty() {
        suite.n = a.n.clone();
    }
    if a.scenario.family.is_none() {
        if let Some(r) = a.replicates {
            suite.replicates = r;
        }
    }
    apply_model(&mut cfg, &a.model)?;
    apply_chain(&mut cfg, &a.chain);
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn run_check(a: &CheckArgs) -> Result<i32> {
    let report = runner::run_check(a.seed, a.perturb)?;
    let mut out = std::io::stdout().lock();
    for c in &report.outcomes {
        let verdict = match (c.passed, c.informational) {
            (true, _) => "PASS",
            (false, true) => "INFO",
            (false, false) => "FAIL",
        };
        write!(
            out,
            "{verdict} {}: worst {:.3e} (tolerance {:.1e}) over {} instances",
            c.name, c.worst, c.tolerance, c.instances
        )?;
        if c.skipped > 0 {
            write!(out, ", {} skipped (degenerate Jacobian)", c.skipped)?;
        }
        if c.rejected > 0 {
            write!(out, ", {} draws rejected (ridge not negligible)", c.rejected)?;
        }
        writeln!(out)?;
    }
    let cv = &report.conventions;
    writeln!(
        out,
        "null dataset at theta {:.4}: log BF {:.4}; P(H0) = BF/(1+BF) = {:.4} (used); 1/(1+BF) = {:.4}",
        cv.theta, cv.log_bf, cv.p_h0_sampler, cv.p_h0_flipped
    )?;
    writeln!(out, "{}", if report.passed { "all checks passed" } else { "some checks FAILED" })?;
    Ok(if report.passed { exit::OK } else { exit::NUMERICAL })
}

fn dispatch(verb: Verb) -> Result<i32> {
    match verb {
        Verb::Test(a) => {
            let cfg = resolve_test(&a)?;
            let run = runner::run_test(&cfg, a.out.as_deref())?;
            if a.out.is_none() {
                print_json(&run.summary)?;
            } else {
                eprintln!("p_h1 = {:.4}", run.summary.p_h1);
            }
        }
        Verb::Bf(a) => {
            let cfg = resolve_bf(&a)?;
            let summary = runner::run_bf(&cfg, a.out.as_deref())?;
            if a.out.is_none() {
                print_json(&summary)?;
            } else {
                eprintln!("log10 BF = {:.4} at theta = {}", summary.log10_bf, summary.theta);
            }
        }
        Verb::Synth(a) => {
            let cfg = resolve_synth(&a)?;
            let data = runner::run_synth(&cfg, a.out.as_deref())?;
            if a.out.is_none() {
                io::write_paired_csv_to(std::io::stdout().lock(), &data, Some(&cfg.header_line()?))?;
            }
        }
        Verb::Experiment(a) => {
            let cfg = resolve_experiment(&a)?;
            let rows = runner::run_experiment(&cfg, a.out.as_deref())?;
            if a.out.is_none() {
                io::write_experiment_csv_to(std::io::stdout().lock(), &rows, Some(&cfg.header_line()?))?;
            }
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            if failed > 0 {
                eprintln!("warning: {failed} of {} replicates failed; see the status column", rows.len());
            }
        }
        Verb::Check(a) => return run_check(&a),
    }
    Ok(exit::OK)
}

/// Caps the global rayon pool at `BKT_THREADS` when it is set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("BKT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| BktError::Config(format!("BKT_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| BktError::Config(format!("cannot configure worker pool: {e}")))
}

/// Runs the command line and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if args.len() <= 1 {
        let mut cmd = <Cli as clap::CommandFactory>::command();
        eprintln!("{}", cmd.render_help());
        return exit::USAGE;
    }
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    let result = configure_threads().and_then(|()| dispatch(cli.verb));
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("bkt: error: {e}");
            e.exit_code()
        }
    }
}
