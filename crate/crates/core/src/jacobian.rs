//! Change-of-variable volume terms for the map `(x, y) -> g(x, y)`.
//!
//! `J = [J_x | J_y]` is `s x 2D` with
//!
//! ```text
//! [J_x]_lm = -k(x, z_l) (x_m - z_lm) / theta
//! [J_y]_lm = +k(y, z_l) (y_m - z_lm) / theta
//! ```
//!
//! and only the `2D x 2D` Gram matrix `J^T J` is ever formed, block by block.

use nalgebra::{DMatrix, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{BktError, Result};
use crate::kernel::{gaussian_kernel, row, EvalPoints, KernelParam, PairedDataset};

/// How a singular `J^T J` is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum JacobianPolicy {
    /// Singular `J^T J` is an error.
    #[default]
    Strict,
    /// Eigenvalues below `1e-12 trace` are clamped to that floor.
    Clamp,
}

/// Relative eigenvalue floor used by [`JacobianPolicy::Clamp`].
pub const CLAMP_RELATIVE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBlocks {
    pub jxtjx: DMatrix<f64>,
    pub jxtjy: DMatrix<f64>,
    pub jytjy: DMatrix<f64>,
    /// Number of evaluation points; `rank(J^T J) <= s`.
    pub s: usize,
}

impl JacobianBlocks {
    pub fn dim(&self) -> usize {
        self.jxtjx.nrows()
    }

    /// The full symmetric `2D x 2D` matrix `J^T J`.
    pub fn assemble(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(2 * d, 2 * d);
        m.view_mut((0, 0), (d, d)).copy_from(&self.jxtjx);
        m.view_mut((0, d), (d, d)).copy_from(&self.jxtjy);
        m.view_mut((d, 0), (d, d)).copy_from(&self.jxtjy.transpose());
        m.view_mut((d, d), (d, d)).copy_from(&self.jytjy);
        m
    }
}

/// Blocks of `J^T J` for one pair, given the kernel columns `k(x_i, z)` and `k(y_i, z)`.
pub(crate) fn blocks_from_kernels(
    xi: &[f64],
    yi: &[f64],
    z: &DMatrix<f64>,
    kx: DVectorView<f64>,
    ky: DVectorView<f64>,
    theta: f64,
) -> JacobianBlocks {
    let d = xi.len();
    let mut jtj = DMatrix::zeros(2 * d, 2 * d);
    fill_jtj(&mut jtj, xi, yi, z, kx, ky, theta);
    JacobianBlocks {
        jxtjx: jtj.view((0, 0), (d, d)).into_owned(),
        jxtjy: jtj.view((0, d), (d, d)).into_owned(),
        jytjy: jtj.view((d, d), (d, d)).into_owned(),
        s: z.nrows(),
    }
}

/// Writes the assembled `2D x 2D` matrix `J^T J` of one pair into `jtj`.
fn fill_jtj(
    jtj: &mut DMatrix<f64>,
    xi: &[f64],
    yi: &[f64],
    z: &DMatrix<f64>,
    kx: DVectorView<f64>,
    ky: DVectorView<f64>,
    theta: f64,
) {
    let d = xi.len();
    let s = z.nrows();
    let zs = z.as_slice();
    let m = 2 * d;
    jtj.fill(0.0);
    let out = jtj.as_mut_slice();
    // Stacked differences (x_i - z_l, y_i - z_l) weighted by the kernel
    // values; J^T J accumulates their outer products with a sign flip on the
    // cross block.
    let mut w = vec![0.0; m];
    let kx = kx.as_slice();
    let ky = ky.as_slice();
    for l in 0..s {
        let (a, b) = (kx[l], ky[l]);
        for u in 0..d {
            let zl = zs[u * s + l];
            w[u] = a * (xi[u] - zl);
            w[d + u] = -b * (yi[u] - zl);
        }
        for (col, &wv) in out.chunks_exact_mut(m).zip(&w) {
            for (o, &wu) in col.iter_mut().zip(&w) {
                *o += wu * wv;
            }
        }
    }
    jtj.scale_mut(1.0 / (theta * theta));
}

/// Closed-form blocks of `J(x_i, y_i)^T J(x_i, y_i)`.
pub fn jacobian_gram(xi: &[f64], yi: &[f64], z: &EvalPoints, p: KernelParam) -> Result<JacobianBlocks> {
    let d = z.dim();
    for v in [xi.len(), yi.len()] {
        if v != d {
            return Err(BktError::DimensionMismatch { expected: d, got: v });
        }
    }
    let s = z.s();
    let mut kx = nalgebra::DVector::zeros(s);
    let mut ky = nalgebra::DVector::zeros(s);
    for l in 0..s {
        let zl = row(z.z(), l);
        kx[l] = gaussian_kernel(xi, &zl, p)?;
        ky[l] = gaussian_kernel(yi, &zl, p)?;
    }
    Ok(blocks_from_kernels(xi, yi, z.z(), kx.as_view(), ky.as_view(), p.theta()))
}

/// `1/2 log det(J^T J)`; singular geometry is an error.
pub fn log_vol(blocks: &JacobianBlocks) -> Result<f64> {
    log_vol_with(blocks, JacobianPolicy::Strict)
}

pub fn log_vol_with(blocks: &JacobianBlocks, policy: JacobianPolicy) -> Result<f64> {
    log_vol_of(&blocks.assemble(), blocks.s, policy)
}

/// `1/2 log det(J^T J)` from the assembled matrix; `s` bounds its rank.
fn log_vol_of(jtj: &DMatrix<f64>, s: usize, policy: JacobianPolicy) -> Result<f64> {
    if jtj.iter().any(|v| !v.is_finite()) {
        return Err(BktError::Numerical("J^T J has non-finite entries".into()));
    }
    let floor = (CLAMP_RELATIVE * jtj.trace()).max(f64::MIN_POSITIVE);
    let eig = jtj.clone().symmetric_eigenvalues();
    let lambda_min = eig.min();
    // Rank is at most s, so fewer than 2D evaluation points is always singular.
    let degenerate = s < eig.len() || lambda_min <= floor;
    match policy {
        JacobianPolicy::Strict if degenerate => Err(BktError::DegenerateJacobian { pair: None, lambda_min }),
        JacobianPolicy::Clamp if degenerate => Ok(0.5 * eig.iter().map(|&l| l.max(floor).ln()).sum::<f64>()),
        _ => Ok(0.5 * scaled_logdet(jtj, &eig)),
    }
}

/// `log det A` for SPD `A` through the Cholesky factor of the unit-diagonal
/// matrix `D^-1/2 A D^-1/2`. `J^T J` is often strongly graded; the rescaled
/// factorisation keeps relative accuracy in the small eigenvalues that the
/// eigenvalues of `A` itself lose. Falls back to `eig` if the factorisation
/// breaks down.
fn scaled_logdet(a: &DMatrix<f64>, eig: &nalgebra::DVector<f64>) -> f64 {
    let d = a.diagonal();
    let inv_sqrt = d.map(|v| 1.0 / v.sqrt());
    let scaled = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    match scaled.cholesky() {
        Some(c) => {
            d.iter().map(|v| v.ln()).sum::<f64>() + 2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
        }
        None => eig.iter().map(|l| l.ln()).sum(),
    }
}

fn tag_pair(err: BktError, i: usize) -> BktError {
    match err {
        BktError::DegenerateJacobian { lambda_min, .. } => BktError::DegenerateJacobian {
            pair: Some(i),
            lambda_min,
        },
        other => other,
    }
}

/// `sum_i 1/2 log det(J_i^T J_i)`, summed in index order.
pub fn total_log_vol(data: &PairedDataset, z: &EvalPoints, p: KernelParam) -> Result<f64> {
    total_log_vol_with(data, z, p, JacobianPolicy::Strict)
}

pub fn total_log_vol_with(data: &PairedDataset, z: &EvalPoints, p: KernelParam, policy: JacobianPolicy) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.n() {
        let (xi, yi) = data.pair(i);
        let blocks = jacobian_gram(&xi, &yi, z, p)?;
        total += log_vol_with(&blocks, policy).map_err(|e| tag_pair(e, i))?;
    }
    Ok(total)
}

/// Same as [`total_log_vol_with`] but reusing precomputed `s x n` kernel blocks.
pub(crate) fn total_log_vol_from_grams(
    data: &PairedDataset,
    z: &DMatrix<f64>,
    k_zx: &DMatrix<f64>,
    k_zy: &DMatrix<f64>,
    theta: f64,
    policy: JacobianPolicy,
) -> Result<f64> {
    let mut total = 0.0;
    let mut xi = vec![0.0; data.dim()];
    let mut yi = vec![0.0; data.dim()];
    let mut jtj = DMatrix::zeros(2 * data.dim(), 2 * data.dim());
    for i in 0..data.n() {
        for m in 0..data.dim() {
            xi[m] = data.x()[(i, m)];
            yi[m] = data.y()[(i, m)];
        }
        fill_jtj(&mut jtj, &xi, &yi, z, k_zx.column(i), k_zy.column(i), theta);
        total += log_vol_of(&jtj, z.nrows(), policy).map_err(|e| tag_pair(e, i))?;
    }
    Ok(total)
}
