//! End-to-end runs behind the command-line verbs. Each takes a resolved
//! [`RunConfig`] and returns its summary; writing artifacts is optional.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{BktError, Result};
use crate::inference::{gibbs_run, posterior_h1, replicate_seed, ChainOutput};
use crate::io::{
    self, BfSummary, ExperimentRow, GridPoint, ResultSummary, RunConfig, ThetaQuantiles, ThetaSource,
    FORMAT_VERSION,
};
use crate::kernel::{median_heuristic, subsample_eval_points, KernelParam, PairedDataset};
use crate::likelihood::Evaluator;
use crate::oracle::{self, CheckOutcome};
use crate::synth::{self, Family, ScenarioSpec};

fn evaluator(data: PairedDataset, cfg: &RunConfig, seed: u64) -> Result<Evaluator> {
    let z = subsample_eval_points(&data, cfg.s, seed)?;
    Evaluator::new(data, z, cfg.sigma_method, cfg.jacobian)
}

fn load_input(cfg: &RunConfig) -> Result<PairedDataset> {
    let path = cfg
        .input
        .as_deref()
        .ok_or_else(|| BktError::Config("an input CSV is required (--input)".into()))?;
    io::read_paired_csv(path)
}

/// Output of [`run_test`].
#[derive(Debug, Clone)]
pub struct TestRun {
    pub summary: ResultSummary,
    pub chain: ChainOutput,
}

/// Joint posterior sampling on the configured input. Evaluation points are
/// drawn with the chain seed. With `out`, writes `summary.json` and
/// `samples.csv` there.
pub fn run_test(cfg: &RunConfig, out: Option<&Path>) -> Result<TestRun> {
    cfg.validate()?;
    run_test_on(load_input(cfg)?, cfg, out)
}

/// [`run_test`] on data already in memory.
pub fn run_test_on(data: PairedDataset, cfg: &RunConfig, out: Option<&Path>) -> Result<TestRun> {
    let start = Instant::now();
    let ev = evaluator(data, cfg, cfg.chain.seed)?;
    let chain = gibbs_run(&ev, &cfg.chain)?;
    let summary = ResultSummary::from_chain(&chain, cfg, start.elapsed().as_secs_f64());
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        io::write_samples_csv(&dir.join("samples.csv"), &chain, Some(&cfg.header_line()?))?;
        io::write_json(&dir.join("summary.json"), &summary)?;
    }
    Ok(TestRun { summary, chain })
}

/// Bayes factor at a fixed `theta`, at the minimum over a grid, or at the
/// median heuristic when neither is configured. With `out`, writes
/// `bf.json` there.
pub fn run_bf(cfg: &RunConfig, out: Option<&Path>) -> Result<BfSummary> {
    cfg.validate()?;
    run_bf_on(load_input(cfg)?, cfg, out)
}

/// [`run_bf`] on data already in memory.
pub fn run_bf_on(data: PairedDataset, cfg: &RunConfig, out: Option<&Path>) -> Result<BfSummary> {
    let start = Instant::now();
    let odds = cfg.chain.prior_odds;
    let (theta_source, grid) = match (cfg.theta, &cfg.theta_grid) {
        (Some(t), _) => (ThetaSource::Fixed, vec![t]),
        (None, Some(g)) => (ThetaSource::GridMinimum, g.values()?),
        (None, None) => (ThetaSource::MedianHeuristic, vec![median_heuristic(&data)?.theta()]),
    };
    let ev = evaluator(data, cfg, cfg.chain.seed)?;
    let points: Vec<(GridPoint, f64)> = grid
        .par_iter()
        .map(|&theta| {
            let (log_bf, ridge) = ev.log_bf_and_ridge(KernelParam::new(theta)?)?;
            Ok((GridPoint { theta, log_bf, p_h1: posterior_h1(log_bf, odds) }, ridge))
        })
        .collect::<Result<_>>()?;
    // Smallest Bayes factor; ties go to the smaller theta, which comes first.
    let (best, ridge) = points
        .iter()
        .copied()
        .reduce(|a, b| if b.0.log_bf < a.0.log_bf { b } else { a })
        .expect("grid is non-empty");
    let summary = BfSummary {
        format_version: FORMAT_VERSION,
        theta: best.theta,
        theta_source,
        log_bf: best.log_bf,
        log10_bf: best.log_bf / std::f64::consts::LN_10,
        p_h1: best.p_h1,
        ridge,
        grid: if theta_source == ThetaSource::GridMinimum { points.iter().map(|p| p.0).collect() } else { Vec::new() },
        config: cfg.clone(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        io::write_json(&dir.join("bf.json"), &summary)?;
    }
    Ok(summary)
}

/// Generates the configured scenario. With `out`, writes it as paired CSV.
pub fn run_synth(cfg: &RunConfig, out: Option<&Path>) -> Result<PairedDataset> {
    let spec = cfg
        .scenario
        .as_ref()
        .ok_or_else(|| BktError::Config("synth needs a scenario".into()))?;
    spec.validate()?;
    let data = synth::gen(spec)?;
    if let Some(path) = out {
        io::write_paired_csv(path, &data, Some(&cfg.header_line()?))?;
    }
    Ok(data)
}

fn experiment_row(name: &str, family: &Family, n: usize, replicate: usize, seed: u64, cfg: &RunConfig) -> ExperimentRow {
    let mut row = ExperimentRow {
        scenario: name.to_string(),
        family: family.name().to_string(),
        n,
        replicate,
        seed,
        p_h1: f64::NAN,
        theta_median: f64::NAN,
        acceptance_rate: f64::NAN,
        max_ridge: f64::NAN,
        status: "ok".into(),
    };
    let result = (|| -> Result<ChainOutput> {
        let data = synth::gen(&ScenarioSpec { family: family.clone(), n, seed })?;
        let chain_cfg = crate::inference::ChainConfig { seed, ..cfg.chain.clone() };
        gibbs_run(&evaluator(data, cfg, seed)?, &chain_cfg)
    })();
    match result {
        Ok(chain) => {
            row.p_h1 = chain.p_h1;
            row.theta_median = ThetaQuantiles::from_samples(&chain.theta_samples).q50;
            row.acceptance_rate = chain.acceptance_rate;
            row.max_ridge = chain.max_ridge;
        }
        Err(e) => row.status = e.to_string(),
    }
    row
}

/// Runs every (scenario, n, replicate) of the configured suite on the rayon
/// pool. Replicate `k` of a cell uses `replicate_seed(seed, k)` for its
/// data, evaluation points and chain, so `bkt synth` followed by `bkt test`
/// with that seed reproduces the row. With `out`, writes
/// `experiment.csv` there.
pub fn run_experiment(cfg: &RunConfig, out: Option<&Path>) -> Result<Vec<ExperimentRow>> {
    cfg.validate()?;
    let suite = cfg
        .suite
        .as_ref()
        .ok_or_else(|| BktError::Config("experiment needs a suite".into()))?;
    let jobs: Vec<(&str, &Family, usize, usize)> = suite
        .scenarios
        .iter()
        .flat_map(|sc| {
            suite.n.iter().flat_map(move |&n| (0..suite.replicates).map(move |k| (sc.name.as_str(), &sc.family, n, k)))
        })
        .collect();
    let rows: Vec<ExperimentRow> = jobs
        .par_iter()
        .map(|&(name, family, n, k)| {
            experiment_row(name, family, n, k, replicate_seed(cfg.chain.seed, k as u64), cfg)
        })
        .collect();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let file = std::fs::File::create(dir.join("experiment.csv"))?;
        io::write_experiment_csv_to(std::io::BufWriter::new(file), &rows, Some(&cfg.header_line()?))?;
    }
    Ok(rows)
}

/// Posterior probability of the null on one dataset under the two label
/// conventions: `BF / (1 + BF)` (used by the sampler) and `1 / (1 + BF)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConventionReport {
    pub theta: f64,
    pub log_bf: f64,
    pub p_h0_sampler: f64,
    pub p_h0_flipped: f64,
}

/// Both label conventions at the median-heuristic `theta` on a null
/// `N(0, 1)` against `N(0, 1)` dataset with `n = 100`, `s = 40`.
pub fn label_conventions(seed: u64) -> Result<ConventionReport> {
    let spec = ScenarioSpec { family: Family::defaults("gauss1d")?, n: 100, seed };
    let data = synth::gen(&spec)?;
    let p = median_heuristic(&data)?;
    let ev = Evaluator::new(
        data.clone(),
        subsample_eval_points(&data, 40, seed)?,
        Default::default(),
        Default::default(),
    )?;
    let log_bf = ev.log_bf(p)?;
    Ok(ConventionReport {
        theta: p.theta(),
        log_bf,
        p_h0_sampler: 1.0 - posterior_h1(log_bf, 1.0),
        p_h0_flipped: posterior_h1(log_bf, 1.0),
    })
}

/// Result of the oracle suite.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub outcomes: Vec<CheckOutcome>,
    pub conventions: ConventionReport,
    /// Whether every non-informational check passed.
    pub passed: bool,
}

/// Runs the oracle suite. `perturb` is a relative error injected into the
/// efficient path; any nonzero value should make the suite fail.
pub fn run_check(seed: u64, perturb: f64) -> Result<CheckReport> {
    let outcomes = oracle::run_suite(seed, perturb)?;
    let passed = outcomes.iter().filter(|c| !c.informational).all(|c| c.passed);
    Ok(CheckReport {
        outcomes,
        conventions: label_conventions(seed)?,
        passed,
    })
}
