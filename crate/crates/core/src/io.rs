//! CSV and JSON artifacts: paired-sample input, sample traces, experiment
//! grids, run configuration and result summaries.
//!
//! Every file written here carries `format_version` and the resolved run
//! configuration. CSV files put them on a leading comment line of the form
//! `# bkt format_version=1 config=<json>`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};

use crate::covariance::SigmaMethod;
use crate::error::{BktError, Result};
use crate::inference::{ChainConfig, ChainOutput};
use crate::jacobian::JacobianPolicy;
use crate::kernel::PairedDataset;
use crate::synth::{Family, ScenarioSpec};

pub const FORMAT_VERSION: u32 = 1;

const HEADER_PREFIX: &str = "# bkt ";

/// Inclusive, equally spaced `theta` grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl GridSpec {
    /// Parses `lo:hi:count`.
    pub fn parse(text: &str) -> Result<GridSpec> {
        let bad = || BktError::Config(format!("theta grid must look like lo:hi:count, got '{text}'"));
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        Ok(GridSpec {
            lo: parts[0].trim().parse().map_err(|_| bad())?,
            hi: parts[1].trim().parse().map_err(|_| bad())?,
            count: parts[2].trim().parse().map_err(|_| bad())?,
        })
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        crate::inference::linear_grid(self.lo, self.hi, self.count)
    }
}

/// A named scenario inside an experiment suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteScenario {
    pub name: String,
    #[serde(flatten)]
    pub family: Family,
}

/// Scenarios crossed with sample sizes, each run for `replicates` seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub scenarios: Vec<SuiteScenario>,
    pub n: Vec<usize>,
    pub replicates: usize,
}

impl SuiteSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() || self.n.is_empty() || self.replicates == 0 {
            return Err(BktError::Config(
                "experiment needs at least one scenario, one n and one replicate".into(),
            ));
        }
        for sc in &self.scenarios {
            for &n in &self.n {
                ScenarioSpec { family: sc.family.clone(), n, seed: 0 }.validate()?;
            }
        }
        Ok(())
    }
}

/// The fully resolved parameters of one invocation. The output location is
/// not part of it, so the same configuration written to two directories
/// yields identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub format_version: u32,
    pub verb: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    pub s: usize,
    pub sigma_method: SigmaMethod,
    pub jacobian: JacobianPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_grid: Option<GridSpec>,
    pub chain: ChainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<SuiteSpec>,
}

impl RunConfig {
    pub fn new(verb: &str) -> RunConfig {
        RunConfig {
            format_version: FORMAT_VERSION,
            verb: verb.to_string(),
            input: None,
            s: 40,
            sigma_method: SigmaMethod::Method2,
            jacobian: JacobianPolicy::Strict,
            theta: None,
            theta_grid: None,
            chain: ChainConfig::default(),
            scenario: None,
            suite: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(BktError::Config(format!(
                "unsupported format_version {} (this build reads {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.s == 0 || !self.s.is_multiple_of(2) {
            return Err(BktError::Config(format!("s must be even and positive, got {}", self.s)));
        }
        if let Some(path) = &self.input {
            if path.as_os_str() != "-" && !path.exists() {
                return Err(BktError::Input(format!("input file {} does not exist", path.display())));
            }
        }
        if self.theta.is_some() && self.theta_grid.is_some() {
            return Err(BktError::Config("give either a fixed theta or a theta grid, not both".into()));
        }
        if let Some(t) = self.theta {
            crate::kernel::KernelParam::new(t).map_err(|_| BktError::Config(format!("theta must be positive, got {t}")))?;
        }
        if let Some(g) = &self.theta_grid {
            g.values()?;
        }
        if let Some(sc) = &self.scenario {
            sc.validate()?;
        }
        if let Some(suite) = &self.suite {
            suite.validate()?;
        }
        self.chain.validate()
    }

    /// The comment line that heads every CSV artifact.
    pub fn header_line(&self) -> Result<String> {
        Ok(format!(
            "{HEADER_PREFIX}format_version={FORMAT_VERSION} config={}",
            serde_json::to_string(self)?
        ))
    }
}

/// Reads a configuration echoed by an earlier run: a bare configuration
/// JSON, a summary JSON with a `config` field, or a CSV artifact whose first
/// line is the `# bkt` header.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    if let Some(first) = text.lines().next().filter(|l| l.starts_with(HEADER_PREFIX)) {
        return parse_header_line(first);
    }
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let cfg = match value.get("config") {
        Some(inner) => serde_json::from_value(inner.clone())?,
        None => serde_json::from_value(value)?,
    };
    Ok(cfg)
}

/// Parses a `# bkt format_version=.. config=..` line.
pub fn parse_header_line(line: &str) -> Result<RunConfig> {
    let bad = |msg: &str| BktError::Parse { line: 1, msg: msg.to_string() };
    let rest = line.strip_prefix(HEADER_PREFIX).ok_or_else(|| bad("not a bkt header line"))?;
    let (version, json) = rest
        .split_once(" config=")
        .ok_or_else(|| bad("header line has no config"))?;
    let version: u32 = version
        .strip_prefix("format_version=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("header line has no format_version"))?;
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format_version {version}")));
    }
    serde_json::from_str(json).map_err(|e| bad(&format!("config: {e}")))
}

fn parse_header(record: &csv::StringRecord, line: u64) -> Result<usize> {
    let cols: Vec<&str> = record.iter().collect();
    if cols.len() < 2 || !cols.len().is_multiple_of(2) {
        return Err(BktError::Parse {
            line,
            msg: format!("header must be x1..xD,y1..yD, got {} columns", cols.len()),
        });
    }
    let d = cols.len() / 2;
    let expected: Vec<String> = (1..=d).map(|j| format!("x{j}")).chain((1..=d).map(|j| format!("y{j}"))).collect();
    if cols.iter().zip(&expected).any(|(c, e)| c != e) {
        let numeric = cols.iter().all(|c| c.parse::<f64>().is_ok());
        let msg = if numeric {
            "missing header row x1..xD,y1..yD".to_string()
        } else {
            format!("header must be {}, got {}", expected.join(","), cols.join(","))
        };
        return Err(BktError::Parse { line, msg });
    }
    Ok(d)
}

/// Reads paired samples from CSV text. Lines starting with `#` are ignored.
pub fn read_paired_csv_from<R: Read>(reader: R) -> Result<PairedDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut dim = None;
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| BktError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let Some(d) = dim else {
            dim = Some(parse_header(&record, line)?);
            continue;
        };
        if record.len() != 2 * d {
            return Err(BktError::Parse {
                line,
                msg: format!("expected {} columns, found {}", 2 * d, record.len()),
            });
        }
        let mut row = Vec::with_capacity(2 * d);
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| BktError::Parse {
                line,
                msg: format!("column {} is not a number: '{cell}'", j + 1),
            })?;
            if !v.is_finite() {
                return Err(BktError::Parse {
                    line,
                    msg: format!("column {} is not finite: '{cell}'", j + 1),
                });
            }
            row.push(v);
        }
        y.push(row.split_off(d));
        x.push(row);
    }
    let Some(d) = dim else {
        return Err(BktError::Parse { line: 1, msg: "empty file: missing header row".into() });
    };
    if x.len() < 2 {
        return Err(BktError::Input(format!("need at least 2 data rows, got {}", x.len())));
    }
    let to_matrix = |rows: &[Vec<f64>]| DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    PairedDataset::new(to_matrix(&x), to_matrix(&y))
}

/// Reads paired samples from a CSV file, or from standard input when the
/// path is `-`.
pub fn read_paired_csv(path: &Path) -> Result<PairedDataset> {
    if path.as_os_str() == "-" {
        return read_paired_csv_from(std::io::stdin().lock());
    }
    read_paired_csv_from(BufReader::new(File::open(path).map_err(|e| {
        BktError::Input(format!("cannot open {}: {e}", path.display()))
    })?))
}

/// Full-precision (17 significant digits) decimal form of a float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_writer<W: Write>(mut out: W, header: Option<&str>) -> Result<csv::Writer<W>> {
    if let Some(h) = header {
        writeln!(out, "{h}")?;
    }
    Ok(csv::Writer::from_writer(out))
}

fn flush<W: Write>(w: csv::Writer<W>) -> Result<()> {
    w.into_inner().map_err(|e| BktError::Io(e.into_error()))?.flush()?;
    Ok(())
}

/// Writes paired samples as `x1..xD,y1..yD` CSV.
pub fn write_paired_csv_to<W: Write>(out: W, data: &PairedDataset, header: Option<&str>) -> Result<()> {
    let mut w = csv_writer(out, header)?;
    let d = data.dim();
    let names: Vec<String> = (1..=d).map(|j| format!("x{j}")).chain((1..=d).map(|j| format!("y{j}"))).collect();
    w.write_record(&names).map_err(csv_error)?;
    for i in 0..data.n() {
        let (xi, yi) = data.pair(i);
        w.write_record(xi.iter().chain(&yi).map(|&v| fmt_f64(v))).map_err(csv_error)?;
    }
    flush(w)
}

pub fn write_paired_csv(path: &Path, data: &PairedDataset, header: Option<&str>) -> Result<()> {
    write_paired_csv_to(BufWriter::new(File::create(path)?), data, header)
}

fn csv_error(e: csv::Error) -> BktError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => BktError::Io(io),
        other => BktError::Input(format!("csv: {other:?}")),
    }
}

/// Writes a chain trace with columns `iter,theta,m,log_bf`, where `m` is 0
/// for the null and 1 for the alternative.
pub fn write_samples_csv_to<W: Write>(out: W, chain: &ChainOutput, header: Option<&str>) -> Result<()> {
    let mut w = csv_writer(out, header)?;
    w.write_record(["iter", "theta", "m", "log_bf"]).map_err(csv_error)?;
    for k in 0..chain.iters.len() {
        w.write_record([
            chain.iters[k].to_string(),
            fmt_f64(chain.theta_samples[k]),
            chain.m_samples[k].as_index().to_string(),
            fmt_f64(chain.log_bf_trace[k]),
        ])
        .map_err(csv_error)?;
    }
    flush(w)
}

pub fn write_samples_csv(path: &Path, chain: &ChainOutput, header: Option<&str>) -> Result<()> {
    write_samples_csv_to(BufWriter::new(File::create(path)?), chain, header)
}

/// One row of a samples CSV.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct SampleRow {
    pub iter: usize,
    pub theta: f64,
    pub m: u8,
    pub log_bf: f64,
}

/// Reads a samples CSV written by [`write_samples_csv`].
pub fn read_samples_csv(path: &Path) -> Result<Vec<SampleRow>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(csv_error)?;
    rdr.deserialize()
        .map(|r| {
            r.map_err(|e| BktError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })
        })
        .collect()
}

/// One replicate of an experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub scenario: String,
    pub family: String,
    pub n: usize,
    pub replicate: usize,
    /// Seed of the generated data, the evaluation points and the chain.
    pub seed: u64,
    pub p_h1: f64,
    pub theta_median: f64,
    pub acceptance_rate: f64,
    pub max_ridge: f64,
    /// `ok`, or the error that stopped the replicate.
    pub status: String,
}

pub fn write_experiment_csv_to<W: Write>(out: W, rows: &[ExperimentRow], header: Option<&str>) -> Result<()> {
    let mut w = csv_writer(out, header)?;
    w.write_record([
        "scenario",
        "family",
        "n",
        "replicate",
        "seed",
        "p_h1",
        "theta_median",
        "acceptance_rate",
        "max_ridge",
        "status",
    ])
    .map_err(csv_error)?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.family.clone(),
            r.n.to_string(),
            r.replicate.to_string(),
            r.seed.to_string(),
            fmt_f64(r.p_h1),
            fmt_f64(r.theta_median),
            fmt_f64(r.acceptance_rate),
            fmt_f64(r.max_ridge),
            r.status.clone(),
        ])
        .map_err(csv_error)?;
    }
    flush(w)
}

pub fn read_experiment_csv(path: &Path) -> Result<Vec<ExperimentRow>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(csv_error)?;
    rdr.deserialize()
        .map(|r| {
            r.map_err(|e| BktError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Returns the `# bkt` header line of a CSV artifact, if present.
pub fn read_header_line(path: &Path) -> Result<Option<String>> {
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    let first = first.trim_end().to_string();
    Ok(first.starts_with(HEADER_PREFIX).then_some(first))
}

/// Posterior quantiles of `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaQuantiles {
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
}

impl ThetaQuantiles {
    pub fn from_samples(samples: &[f64]) -> ThetaQuantiles {
        let mut data = Data::new(samples.to_vec());
        ThetaQuantiles {
            q05: data.quantile(0.05),
            q25: data.quantile(0.25),
            q50: data.quantile(0.50),
            q75: data.quantile(0.75),
            q95: data.quantile(0.95),
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.q05, self.q25, self.q50, self.q75, self.q95]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeDiagnostics {
    /// Largest ridge added to the covariance estimate along the chain.
    pub max_ridge: f64,
    /// HMC trajectories rejected because an evaluation failed.
    pub rejected_nonfinite: usize,
}

/// Machine-readable result of a sampling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSummary {
    pub format_version: u32,
    pub p_h1: f64,
    pub theta_quantiles: ThetaQuantiles,
    pub acceptance_rate: f64,
    pub ridge: RidgeDiagnostics,
    pub theta0: f64,
    pub step_size_h0: f64,
    pub step_size_h1: f64,
    pub retained: usize,
    /// The kernel-parameter prior as interpreted by the sampler.
    pub prior: String,
    pub config: RunConfig,
    pub wall_clock_seconds: f64,
}

impl ResultSummary {
    pub fn from_chain(chain: &ChainOutput, config: &RunConfig, wall_clock_seconds: f64) -> ResultSummary {
        ResultSummary {
            format_version: FORMAT_VERSION,
            p_h1: chain.p_h1,
            theta_quantiles: ThetaQuantiles::from_samples(&chain.theta_samples),
            acceptance_rate: chain.acceptance_rate,
            ridge: RidgeDiagnostics {
                max_ridge: chain.max_ridge,
                rejected_nonfinite: chain.rejected_nonfinite,
            },
            theta0: chain.theta0,
            step_size_h0: chain.step_size_h0,
            step_size_h1: chain.step_size_h1,
            retained: chain.theta_samples.len(),
            prior: format!(
                "theta ~ Gamma(shape = {}, rate = {})",
                config.chain.prior_shape, config.chain.prior_rate
            ),
            config: config.clone(),
            wall_clock_seconds,
        }
    }
}

/// `theta` and Bayes factor at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub theta: f64,
    pub log_bf: f64,
    pub p_h1: f64,
}

/// How the reported `theta` of a Bayes-factor run was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaSource {
    Fixed,
    MedianHeuristic,
    GridMinimum,
}

/// Machine-readable result of a fixed-`theta` or grid Bayes-factor run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BfSummary {
    pub format_version: u32,
    pub theta: f64,
    pub theta_source: ThetaSource,
    pub log_bf: f64,
    pub log10_bf: f64,
    pub p_h1: f64,
    pub ridge: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<GridPoint>,
    pub config: RunConfig,
    pub wall_clock_seconds: f64,
}

/// Writes pretty-printed JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_minimal_file() {
        let d = read_paired_csv_from("x1,y1\n0.5,1.5\n-1,2\n".as_bytes()).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.dim(), 1);
        assert_eq!(d.y()[(1, 0)], 2.0);
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let text = "# bkt format_version=1 config={}\nx1,x2,y1,y2\n# note\n1,2,3,4\n\n5,6,7,8\n";
        let d = read_paired_csv_from(text.as_bytes()).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.x()[(1, 1)], 6.0);
        assert_eq!(d.y()[(0, 0)], 3.0);
    }

    fn parse_line(text: &str) -> u64 {
        match read_paired_csv_from(text.as_bytes()) {
            Err(BktError::Parse { line, .. }) => line,
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_line() {
        assert_eq!(parse_line("x1,y1\n1,2\nNaN,3\n"), 3);
        assert_eq!(parse_line("x1,y1\n1,2\n3,inf\n"), 3);
        assert_eq!(parse_line("x1,y1\n1,2\n3\n"), 3);
        assert_eq!(parse_line("x1,y1\n1,2\n3,abc\n"), 3);
        assert_eq!(parse_line("1,2\n3,4\n"), 1);
        assert_eq!(parse_line("a,b\n3,4\n"), 1);
        assert_eq!(parse_line("# only\n# comments\nx1,y1\n1,2\n3,4,5\n"), 5);
        assert_eq!(parse_line(""), 1);
    }

    #[test]
    fn too_few_rows() {
        assert!(matches!(read_paired_csv_from("x1,y1\n1,2\n".as_bytes()), Err(BktError::Input(_))));
    }

    #[test]
    fn header_line_round_trip() {
        let mut cfg = RunConfig::new("test");
        cfg.theta_grid = Some(GridSpec { lo: 0.5, hi: 2.0, count: 4 });
        let line = cfg.header_line().unwrap();
        assert!(line.starts_with("# bkt format_version=1 config={"));
        assert_eq!(parse_header_line(&line).unwrap(), cfg);
    }

    #[test]
    fn grid_spec_parsing() {
        assert_eq!(GridSpec::parse("0.01:40:60").unwrap(), GridSpec { lo: 0.01, hi: 40.0, count: 60 });
        assert!(GridSpec::parse("1:2").is_err());
        assert!(GridSpec::parse("a:2:3").is_err());
    }

    #[test]
    fn quantiles_are_monotone() {
        let q = ThetaQuantiles::from_samples(&[3.0, 1.0, 2.0, 5.0, 4.0]);
        assert!(q.as_array().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(q.q50, 3.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = RunConfig::new("test");
        assert!(cfg.validate().is_ok());
        cfg.s = 7;
        assert!(matches!(cfg.validate(), Err(BktError::Config(_))));
        cfg.s = 10;
        cfg.theta = Some(1.0);
        cfg.theta_grid = Some(GridSpec { lo: 1.0, hi: 2.0, count: 2 });
        assert!(cfg.validate().is_err());
        cfg.theta_grid = None;
        cfg.input = Some(PathBuf::from("/nonexistent/data.csv"));
        assert!(matches!(cfg.validate(), Err(BktError::Input(_))));
    }
}
