//! Estimators of the noise covariance `Sigma` of the feature difference
//! `g(X, Y)` at fixed evaluation points, plus ridge repair.
//!
//! `Sigma` is the covariance of a single column of `G`; the witness vector
//! `Delta` has covariance `Sigma / n`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{BktError, Result};
use crate::kernel::WitnessState;
use crate::linalg;

/// Relative ridge added on top of any negative-eigenvalue correction.
pub const RELATIVE_RIDGE: f64 = 1e-8;

/// Absolute ridge floor, used when the matrix is identically zero.
pub const MIN_RIDGE: f64 = 1.0e-154;

/// Asymmetry tolerated by [`psd_repair`], relative to the largest entry.
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SigmaMethod {
    /// Separate centred second moments of `K_zx` and `K_zy`; assumes `X` and `Y` independent.
    Method1,
    /// Centred second moment of the columns of `G`; no independence assumption.
    #[default]
    Method2,
}

impl SigmaMethod {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(SigmaMethod::Method1),
            2 => Ok(SigmaMethod::Method2),
            other => Err(BktError::Config(format!("sigma method must be 1 or 2, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovEstimate {
    pub sigma: DMatrix<f64>,
    pub method: SigmaMethod,
    pub ridge_added: f64,
}

impl CovEstimate {
    pub fn s(&self) -> usize {
        self.sigma.nrows()
    }
}

fn check_n(state: &WitnessState, n: usize) -> Result<()> {
    if n < 2 {
        return Err(BktError::Config(format!("covariance estimation needs n >= 2, got {n}")));
    }
    if state.n() != n {
        return Err(BktError::DimensionMismatch { expected: n, got: state.n() });
    }
    Ok(())
}

/// `Sigma = (1/n) (K_zx H K_xz + K_zy H K_yz)`, cross terms dropped.
pub fn sigma_method1(state: &WitnessState, n: usize) -> Result<CovEstimate> {
    check_n(state, n)?;
    let mut sigma = (linalg::centered_outer(&state.k_zx) + linalg::centered_outer(&state.k_zy)) / n as f64;
    linalg::symmetrize(&mut sigma);
    Ok(CovEstimate {
        sigma,
        method: SigmaMethod::Method1,
        ridge_added: 0.0,
    })
}

/// `Sigma = (1/n) G H G^T`.
pub fn sigma_method2(state: &WitnessState, n: usize) -> Result<CovEstimate> {
    check_n(state, n)?;
    Ok(CovEstimate {
        sigma: linalg::centered_outer(&state.g) / n as f64,
        method: SigmaMethod::Method2,
        ridge_added: 0.0,
    })
}

/// Adds `eps I` with `eps = max(0, -lambda_min) + 1e-8 trace / s` (floored at
/// [`MIN_RIDGE`]) so that the result admits a Cholesky factorisation.
pub fn psd_repair(sigma: &DMatrix<f64>, method: SigmaMethod) -> Result<CovEstimate> {
    if !sigma.is_square() || sigma.nrows() == 0 {
        return Err(BktError::Input(format!(
            "psd_repair needs a non-empty square matrix, got {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(BktError::Numerical("covariance has non-finite entries".into()));
    }
    let scale = sigma.amax().max(f64::MIN_POSITIVE);
    let asym = linalg::asymmetry(sigma);
    if asym > SYMMETRY_TOL * scale {
        return Err(BktError::Input(format!("matrix is not symmetric (max asymmetry {asym:e})")));
    }
    let s = sigma.nrows() as f64;
    let lambda_min = linalg::min_eigenvalue(sigma);
    let ridge = ((-lambda_min).max(0.0) + RELATIVE_RIDGE * sigma.trace().max(0.0) / s).max(MIN_RIDGE);
    let mut repaired = sigma.clone();
    linalg::symmetrize(&mut repaired);
    for i in 0..sigma.nrows() {
        repaired[(i, i)] += ridge;
    }
    Ok(CovEstimate {
        sigma: repaired,
        method,
        ridge_added: ridge,
    })
}

/// Estimate with the chosen method followed by [`psd_repair`].
pub fn estimate_sigma(state: &WitnessState, n: usize, method: SigmaMethod) -> Result<CovEstimate> {
    let raw = match method {
        SigmaMethod::Method1 => sigma_method1(state, n)?,
        SigmaMethod::Method2 => sigma_method2(state, n)?,
    };
    psd_repair(&raw.sigma, method)
}
