//! Null and alternative marginal pseudolikelihoods of the paired data given
//! `theta`.
//!
//! With `W = 1 1^T (x) R + I_n (x) Sigma` the alternative is
//! `N(vec G; 0, W) * prod_i vol J_i` and the null is
//! `N(vec G; 0, I_n (x) Sigma) * prod_i vol J_i`. The efficient forms below
//! never build an `ns x ns` matrix:
//!
//! ```text
//! log det W        = log det(Sigma + nR) + (n - 1) log det Sigma
//! vec(G)^T W^-1 vec(G)
//!                  = Tr((Sigma + nR)^-1 G G^T + ((1/n) Sigma R^-1 Sigma + Sigma)^-1 G H G^T)
//! ```
//!
//! Since `G G^T = G H G^T + n Delta Delta^T`, the quadratic form equals
//! `n Delta^T (Sigma + nR)^-1 Delta + Tr(Sigma^-1 G H G^T)`, which is how it is
//! evaluated: two sums of squared triangular solves, no inverse of `R` and no
//! cancellation between large terms when `Sigma + nR` is ill-conditioned. All values include the full Gaussian
//! normalising constant so that null and alternative are directly comparable.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::covariance::{estimate_sigma, psd_repair, CovEstimate, SigmaMethod};
use crate::error::{BktError, Result};
use crate::inference::Hypothesis;
use crate::jacobian::{total_log_vol_from_grams, JacobianPolicy};
use crate::kernel::{
    kernel_from_sq, sq_dist_matrix, EvalPoints, KernelKind, KernelParam, PairedDataset, WitnessState,
};
use crate::linalg::{self, Chol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LikPath {
    Naive,
    Efficient,
    Remark,
}

/// A log marginal pseudolikelihood value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLik {
    pub value: f64,
    pub model: Hypothesis,
    pub path: LikPath,
}

/// `[R]_ij = r(z_i, z_j)`.
pub fn r_matrix(z: &EvalPoints, p: KernelParam) -> Result<DMatrix<f64>> {
    let sq = sq_dist_matrix(z.z(), z.z())?;
    let mut r = kernel_from_sq(&sq, p, KernelKind::R, z.dim());
    linalg::symmetrize(&mut r);
    Ok(r)
}

fn check_square(m: &DMatrix<f64>, s: usize, what: &str) -> Result<()> {
    if m.nrows() != s || m.ncols() != s {
        return Err(BktError::Input(format!(
            "{what} must be {s}x{s}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn gaussian_const(n: usize, s: usize) -> f64 {
    -0.5 * (n * s) as f64 * (2.0 * PI).ln()
}

/// Cholesky of `Sigma + nR`; on failure `R` is ridge-repaired once.
fn chol_sigma_plus_nr(sigma: &DMatrix<f64>, r: &DMatrix<f64>, n: usize) -> Result<Chol> {
    let nf = n as f64;
    if let Some(c) = (sigma + r * nf).cholesky() {
        return Ok(c);
    }
    let r_fixed = psd_repair(r, SigmaMethod::Method2)?.sigma;
    linalg::cholesky(&(sigma + r_fixed * nf), "Sigma + nR")
}

/// `log det(1 1^T (x) R + I_n (x) Sigma) = log det(Sigma + nR) + (n-1) log det Sigma`.
pub fn kron_logdet(sigma: &DMatrix<f64>, r: &DMatrix<f64>, n: usize) -> Result<f64> {
    let s = sigma.nrows();
    check_square(sigma, s, "Sigma")?;
    check_square(r, s, "R")?;
    if n == 0 {
        return Err(BktError::Config("n must be positive".into()));
    }
    let cs = linalg::cholesky(sigma, "Sigma")?;
    let cw = chol_sigma_plus_nr(sigma, r, n)?;
    Ok(linalg::chol_logdet(&cw) + (n as f64 - 1.0) * linalg::chol_logdet(&cs))
}

/// `vec(G)^T W^-1 vec(G)` for `W = 1 1^T (x) R + I_n (x) Sigma`.
pub fn kron_quadform(g: &DMatrix<f64>, sigma: &DMatrix<f64>, r: &DMatrix<f64>, n: usize) -> Result<f64> {
    let s = g.nrows();
    check_square(sigma, s, "Sigma")?;
    check_square(r, s, "R")?;
    if g.ncols() != n || n == 0 {
        return Err(BktError::DimensionMismatch { expected: n, got: g.ncols() });
    }
    let cs = linalg::cholesky(sigma, "Sigma")?;
    let cw = chol_sigma_plus_nr(sigma, r, n)?;
    Ok(kron_quadform_with(g, &cs, &cw))
}

fn kron_quadform_with(g: &DMatrix<f64>, cs: &Chol, cw: &Chol) -> f64 {
    let n = g.ncols();
    let delta = crate::kernel::row_means(g);
    let mean_part = n as f64 * linalg::quad_solve(cw, &delta);
    let centred_part = if n > 1 {
        linalg::frob_solve(cs, &linalg::center_columns(g))
    } else {
        0.0
    };
    mean_part + centred_part
}

/// Simplified quadratic form when `Sigma = (1/n) G H G^T`:
/// `Tr(n (G H G^T + n^2 R)^-1 (G G^T + n^2 R))`, evaluated as
/// `n s + n^2 Delta^T (G H G^T + n^2 R)^-1 Delta`.
///
/// The simplification needs `G H G^T` of full rank. When the ridge of
/// [`psd_repair`] stands in for missing rank, the general form counts only
/// `n rank(G H G^T)` in its centred part and the two differ by
/// `n (s - rank)`.
pub fn remark_quadform(g: &DMatrix<f64>, r: &DMatrix<f64>, n: usize) -> Result<f64> {
    let s = g.nrows();
    check_square(r, s, "R")?;
    if g.ncols() != n {
        return Err(BktError::DimensionMismatch { expected: n, got: g.ncols() });
    }
    if n < 2 {
        return Err(BktError::Config(
            "remark path needs n >= 2 (the empirical covariance vanishes for n = 1)".into(),
        ));
    }
    let nf = n as f64;
    let n2r = r * (nf * nf);
    let lhs = linalg::centered_outer(g) + &n2r;
    let c = linalg::cholesky(&lhs, "G H G^T + n^2 R")?;
    let delta = crate::kernel::row_means(g);
    Ok(nf * s as f64 + nf * nf * linalg::quad_solve(&c, &delta))
}

fn witness_with_grams(data: &PairedDataset, z: &EvalPoints, p: KernelParam) -> Result<WitnessState> {
    crate::kernel::witness_state(data, z, p)
}

fn log_vol_total(data: &PairedDataset, z: &EvalPoints, p: KernelParam, w: &WitnessState, policy: JacobianPolicy) -> Result<f64> {
    total_log_vol_from_grams(data, z.z(), &w.k_zx, &w.k_zy, p.theta(), policy)
}

/// Null log pseudolikelihood:
/// `-(n/2) log det Sigma - 1/2 Tr(Sigma^-1 G G^T) + sum_i log vol J_i` plus constants.
pub fn loglik_null(
    data: &PairedDataset,
    z: &EvalPoints,
    p: KernelParam,
    sigma: &CovEstimate,
    policy: JacobianPolicy,
) -> Result<LogLik> {
    let w = witness_with_grams(data, z, p)?;
    check_square(&sigma.sigma, z.s(), "Sigma")?;
    let cs = linalg::cholesky(&sigma.sigma, "Sigma")?;
    let lv = log_vol_total(data, z, p, &w, policy)?;
    Ok(LogLik {
        value: null_value(&w.g, &cs, lv),
        model: Hypothesis::H0,
        path: LikPath::Efficient,
    })
}

fn null_value(g: &DMatrix<f64>, cs: &Chol, log_vol: f64) -> f64 {
    let (s, n) = g.shape();
    let quad = linalg::frob_solve(cs, g);
    gaussian_const(n, s) - 0.5 * n as f64 * linalg::chol_logdet(cs) - 0.5 * quad + log_vol
}

/// Alternative log pseudolikelihood through the determinant-lemma and
/// Woodbury forms.
pub fn loglik_alt(
    data: &PairedDataset,
    z: &EvalPoints,
    p: KernelParam,
    sigma: &CovEstimate,
    r: &DMatrix<f64>,
    policy: JacobianPolicy,
) -> Result<LogLik> {
    let w = witness_with_grams(data, z, p)?;
    check_square(&sigma.sigma, z.s(), "Sigma")?;
    check_square(r, z.s(), "R")?;
    let n = data.n();
    let cs = linalg::cholesky(&sigma.sigma, "Sigma")?;
    let cw = chol_sigma_plus_nr(&sigma.sigma, r, n)?;
    let lv = log_vol_total(data, z, p, &w, policy)?;
    Ok(LogLik {
        value: alt_value(&w.g, &cs, &cw, lv),
        model: Hypothesis::H1,
        path: LikPath::Efficient,
    })
}

fn alt_value(g: &DMatrix<f64>, cs: &Chol, cw: &Chol, log_vol: f64) -> f64 {
    let (s, n) = g.shape();
    let logdet = linalg::chol_logdet(cw) + (n as f64 - 1.0) * linalg::chol_logdet(cs);
    let quad = kron_quadform_with(g, cs, cw);
    gaussian_const(n, s) - 0.5 * logdet - 0.5 * quad + log_vol
}

/// Alternative log pseudolikelihood with the quadratic form taken from
/// [`remark_quadform`]; only meaningful for [`SigmaMethod::Method2`].
pub fn loglik_alt_remark(
    data: &PairedDataset,
    z: &EvalPoints,
    p: KernelParam,
    sigma: &CovEstimate,
    r: &DMatrix<f64>,
    policy: JacobianPolicy,
) -> Result<LogLik> {
    if sigma.method != SigmaMethod::Method2 {
        return Err(BktError::Config("remark path requires the Method2 covariance".into()));
    }
    let w = witness_with_grams(data, z, p)?;
    let n = data.n();
    let logdet = kron_logdet(&sigma.sigma, r, n)?;
    let quad = remark_quadform(&w.g, r, n)?;
    let lv = log_vol_total(data, z, p, &w, policy)?;
    Ok(LogLik {
        value: gaussian_const(n, z.s()) - 0.5 * logdet - 0.5 * quad + lv,
        model: Hypothesis::H1,
        path: LikPath::Remark,
    })
}

/// Everything the sampler needs at one `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaEval {
    pub theta: f64,
    pub loglik_null: f64,
    pub loglik_alt: f64,
    /// `log N(Delta; 0, Sigma/n) - log N(Delta; 0, R + Sigma/n)`.
    pub log_bf: f64,
    pub ridge: f64,
}

impl ThetaEval {
    pub fn loglik(&self, model: Hypothesis) -> f64 {
        match model {
            Hypothesis::H0 => self.loglik_null,
            Hypothesis::H1 => self.loglik_alt,
        }
    }
}

/// Caches the `theta`-independent geometry of a problem (squared distances
/// between data and evaluation points) so that repeated evaluations over
/// `theta` only pay for the kernel exponentials and the `s x s` algebra.
#[derive(Debug, Clone)]
pub struct Evaluator {
    data: PairedDataset,
    z: EvalPoints,
    sq_zx: DMatrix<f64>,
    sq_zy: DMatrix<f64>,
    sq_zz: DMatrix<f64>,
    method: SigmaMethod,
    policy: JacobianPolicy,
}

impl Evaluator {
    pub fn new(data: PairedDataset, z: EvalPoints, method: SigmaMethod, policy: JacobianPolicy) -> Result<Self> {
        if z.dim() != data.dim() {
            return Err(BktError::DimensionMismatch {
                expected: data.dim(),
                got: z.dim(),
            });
        }
        let sq_zx = sq_dist_matrix(z.z(), data.x())?;
        let sq_zy = sq_dist_matrix(z.z(), data.y())?;
        let sq_zz = sq_dist_matrix(z.z(), z.z())?;
        Ok(Evaluator {
            data,
            z,
            sq_zx,
            sq_zy,
            sq_zz,
            method,
            policy,
        })
    }

    pub fn data(&self) -> &PairedDataset {
        &self.data
    }

    pub fn z(&self) -> &EvalPoints {
        &self.z
    }

    pub fn method(&self) -> SigmaMethod {
        self.method
    }

    pub fn policy(&self) -> JacobianPolicy {
        self.policy
    }

    pub fn witness(&self, p: KernelParam) -> WitnessState {
        let dim = self.data.dim();
        WitnessState::from_grams(
            kernel_from_sq(&self.sq_zx, p, KernelKind::K, dim),
            kernel_from_sq(&self.sq_zy, p, KernelKind::K, dim),
        )
    }

    pub fn r_matrix(&self, p: KernelParam) -> DMatrix<f64> {
        kernel_from_sq(&self.sq_zz, p, KernelKind::R, self.data.dim())
    }

    pub fn sigma(&self, w: &WitnessState) -> Result<CovEstimate> {
        estimate_sigma(w, self.data.n(), self.method)
    }

    /// Fixed-`theta` log Bayes factor only (no Jacobian work).
    pub fn log_bf(&self, p: KernelParam) -> Result<f64> {
        Ok(self.log_bf_and_ridge(p)?.0)
    }

    /// Log Bayes factor and the ridge that was added to `Sigma`.
    pub fn log_bf_and_ridge(&self, p: KernelParam) -> Result<(f64, f64)> {
        let w = self.witness(p);
        let sigma = self.sigma(&w)?;
        let r = self.r_matrix(p);
        let v = crate::inference::log_bf_from_parts(&w.delta, &sigma.sigma, &r, self.data.n())?;
        Ok((v, sigma.ridge_added))
    }

    /// Log pseudolikelihood of a single model; the null skips all work on `R`.
    pub fn loglik(&self, p: KernelParam, model: Hypothesis) -> Result<f64> {
        let n = self.data.n();
        let w = self.witness(p);
        let sigma = self.sigma(&w)?;
        let cs = linalg::cholesky(&sigma.sigma, "Sigma")?;
        let lv = total_log_vol_from_grams(&self.data, self.z.z(), &w.k_zx, &w.k_zy, p.theta(), self.policy)?;
        match model {
            Hypothesis::H0 => Ok(null_value(&w.g, &cs, lv)),
            Hypothesis::H1 => {
                let r = self.r_matrix(p);
                let cw = chol_sigma_plus_nr(&sigma.sigma, &r, n)?;
                Ok(alt_value(&w.g, &cs, &cw, lv))
            }
        }
    }

    /// Both pseudolikelihoods and the Bayes factor at `p`.
    pub fn evaluate(&self, p: KernelParam) -> Result<ThetaEval> {
        let n = self.data.n();
        let w = self.witness(p);
        let sigma = self.sigma(&w)?;
        let r = self.r_matrix(p);
        let cs = linalg::cholesky(&sigma.sigma, "Sigma")?;
        let cw = chol_sigma_plus_nr(&sigma.sigma, &r, n)?;
        let lv = total_log_vol_from_grams(&self.data, self.z.z(), &w.k_zx, &w.k_zy, p.theta(), self.policy)?;
        let loglik_null = null_value(&w.g, &cs, lv);
        let loglik_alt = alt_value(&w.g, &cs, &cw, lv);
        let log_bf = crate::inference::log_bf_from_parts(&w.delta, &sigma.sigma, &r, n)?;
        Ok(ThetaEval {
            theta: p.theta(),
            loglik_null,
            loglik_alt,
            log_bf,
            ridge: sigma.ridge_added,
        })
    }
}
