//! Bayes factors at fixed `theta`, the posterior model probability, grid
//! search over `theta`, and joint sampling of `(theta, M)`.

mod gibbs;
mod hmc;

pub use gibbs::{gibbs_run, log_prior_theta, log_target_theta, replicate_seed, ChainConfig, ChainOutput, ThetaTarget};
pub use hmc::{hmc_update, run_hmc_chain, DualAverage, HmcChain, HmcStep, LogTarget, StandardNormal};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::covariance::{psd_repair, CovEstimate, SigmaMethod};
use crate::error::{BktError, Result};
use crate::jacobian::JacobianPolicy;
use crate::kernel::{EvalPoints, KernelParam, PairedDataset, WitnessState};
use crate::likelihood::Evaluator;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    /// Both samples come from the same distribution.
    H0,
    /// The distributions differ.
    H1,
}

impl Hypothesis {
    pub fn as_index(self) -> u8 {
        match self {
            Hypothesis::H0 => 0,
            Hypothesis::H1 => 1,
        }
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hypothesis::H0 => write!(f, "H0"),
            Hypothesis::H1 => write!(f, "H1"),
        }
    }
}

/// `BF = P(Delta | H0, theta) / P(Delta | H1, theta)` on the log scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BayesFactor {
    pub log_bf: f64,
    pub theta: f64,
}

impl BayesFactor {
    pub fn log10_bf(&self) -> f64 {
        self.log_bf / std::f64::consts::LN_10
    }

    /// `P(H0 | Delta, theta)` under equal model priors.
    pub fn p_h0(&self) -> f64 {
        1.0 - posterior_h1(self.log_bf, 1.0)
    }

    pub fn p_h1(&self, prior_odds: f64) -> f64 {
        posterior_h1(self.log_bf, prior_odds)
    }
}

fn chol_with_repair(m: &DMatrix<f64>, what: &str) -> Result<linalg::Chol> {
    match m.clone().cholesky() {
        Some(c) => Ok(c),
        None => {
            let mut sym = m.clone();
            linalg::symmetrize(&mut sym);
            linalg::cholesky(&psd_repair(&sym, SigmaMethod::Method2)?.sigma, what)
        }
    }
}

/// `log N(Delta; 0, Sigma/n) - log N(Delta; 0, R + Sigma/n)`.
pub fn log_bf_from_parts(delta: &DVector<f64>, sigma: &DMatrix<f64>, r: &DMatrix<f64>, n: usize) -> Result<f64> {
    let s = delta.len();
    if sigma.shape() != (s, s) || r.shape() != (s, s) {
        return Err(BktError::DimensionMismatch { expected: s, got: sigma.nrows() });
    }
    if n == 0 {
        return Err(BktError::Config("n must be positive".into()));
    }
    let a = sigma / n as f64;
    let b = r + &a;
    let ca = chol_with_repair(&a, "Sigma / n")?;
    let cb = chol_with_repair(&b, "R + Sigma / n")?;
    let value = 0.5 * (linalg::chol_logdet(&cb) - linalg::chol_logdet(&ca))
        + 0.5 * (linalg::quad_solve(&cb, delta) - linalg::quad_solve(&ca, delta));
    if !value.is_finite() {
        return Err(BktError::Numerical(format!("log Bayes factor is {value}")));
    }
    Ok(value)
}

/// Bayes factor of the witness vector at a fixed `theta`.
pub fn bayes_factor_fixed_theta(
    state: &WitnessState,
    sigma: &CovEstimate,
    r: &DMatrix<f64>,
    n: usize,
    p: KernelParam,
) -> Result<BayesFactor> {
    Ok(BayesFactor {
        log_bf: log_bf_from_parts(&state.delta, &sigma.sigma, r, n)?,
        theta: p.theta(),
    })
}

/// `P(H1 | D) = 1 / (1 + BF / odds)` with `odds = P(H1) / P(H0)`.
pub fn posterior_h1(log_bf: f64, prior_odds: f64) -> f64 {
    let t = prior_odds.ln() - log_bf;
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `count` equally spaced values from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(BktError::Config("grid needs at least one point".into()));
    }
    if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 || hi < lo {
        return Err(BktError::Config(format!("grid bounds must satisfy 0 < lo <= hi, got {lo}:{hi}")));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (count - 1) as f64;
    Ok((0..count).map(|i| if i + 1 == count { hi } else { lo + step * i as f64 }).collect())
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(BktError::Config("theta grid is empty".into()));
    }
    for &t in grid {
        KernelParam::new(t)?;
    }
    Ok(())
}

/// The grid value with the smallest Bayes factor; ties go to the smaller `theta`.
pub fn grid_search_with(ev: &Evaluator, grid: &[f64]) -> Result<(KernelParam, BayesFactor)> {
    check_grid(grid)?;
    let mut best: Option<(KernelParam, BayesFactor)> = None;
    for &t in grid {
        let p = KernelParam::new(t)?;
        let bf = BayesFactor {
            log_bf: ev.log_bf(p)?,
            theta: t,
        };
        let better = match &best {
            None => true,
            Some((bp, b)) => bf.log_bf < b.log_bf || (bf.log_bf == b.log_bf && t < bp.theta()),
        };
        if better {
            best = Some((p, bf));
        }
    }
    Ok(best.expect("grid checked non-empty"))
}

pub fn grid_search_theta(
    data: &PairedDataset,
    z: &EvalPoints,
    grid: &[f64],
    method: SigmaMethod,
) -> Result<(KernelParam, BayesFactor)> {
    let ev = Evaluator::new(data.clone(), z.clone(), method, JacobianPolicy::Strict)?;
    grid_search_with(&ev, grid)
}

/// `(theta, 1 / (1 + BF_theta))` along a grid.
pub fn conditional_h1_curve(
    data: &PairedDataset,
    z: &EvalPoints,
    grid: &[f64],
    method: SigmaMethod,
) -> Result<Vec<(f64, f64)>> {
    check_grid(grid)?;
    let ev = Evaluator::new(data.clone(), z.clone(), method, JacobianPolicy::Strict)?;
    grid.iter()
        .map(|&t| Ok((t, posterior_h1(ev.log_bf(KernelParam::new(t)?)?, 1.0))))
        .collect()
}
