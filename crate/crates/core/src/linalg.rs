//! Small dense helpers shared by the likelihood, oracle and inference code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{BktError, Result};

pub(crate) type Chol = Cholesky<f64, Dyn>;

pub(crate) fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Chol> {
    Cholesky::new(m.clone()).ok_or_else(|| BktError::SingularCovariance(format!("Cholesky of {what} failed")))
}

/// `log det` from a Cholesky factor.
pub(crate) fn chol_logdet(c: &Chol) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}


/// `Tr(M^T A^{-1} M) = ||L^{-1} M||_F^2` for `A = L L^T`. Summing squares
/// avoids the cancellation of a full solve on ill-conditioned `A`.
pub(crate) fn frob_solve(c: &Chol, m: &DMatrix<f64>) -> f64 {
    c.l_dirty()
        .solve_lower_triangular(m)
        .expect("Cholesky factor has a positive diagonal")
        .norm_squared()
}

/// `v^T A^{-1} v` for `A = L L^T`, via a single triangular solve.
pub(crate) fn quad_solve(c: &Chol, v: &DVector<f64>) -> f64 {
    let w = c
        .l_dirty()
        .solve_lower_triangular(v)
        .expect("Cholesky factor has a positive diagonal");
    w.norm_squared()
}

/// Largest absolute asymmetry `|A_ij - A_ji|`.
pub(crate) fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        for i in (j + 1)..m.nrows() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let s = m.nrows();
    for j in 0..s {
        for i in (j + 1)..s {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

/// `M H M^T` with the centering matrix `H = I - (1/n) 1 1^T` applied implicitly.
pub(crate) fn centered_outer(m: &DMatrix<f64>) -> DMatrix<f64> {
    let c = center_columns(m);
    let mut out = &c * c.transpose();
    symmetrize(&mut out);
    out
}

/// `M H`: subtracts the row mean from every column.
pub(crate) fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = crate::kernel::row_means(m);
    let mut c = m.clone();
    for mut col in c.column_iter_mut() {
        col -= &mean;
    }
    c
}
