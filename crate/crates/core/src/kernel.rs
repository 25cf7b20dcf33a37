//! Gaussian RBF kernel, its self-convolution `r`, gram assembly, the median
//! heuristic, evaluation-point subsampling and the witness vector.
//!
//! The kernel is parameterised by the squared lengthscale `theta`:
//!
//! ```text
//! k(a, b) = exp(-|a - b|^2 / (2 theta))
//! r(a, b) = (pi theta)^(D/2) exp(-|a - b|^2 / (4 theta))
//! ```
//!
//! `r` is the convolution of `k` with itself under Lebesgue measure on R^D and
//! serves as the covariance of the Gaussian-process prior on the witness
//! function.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{BktError, Result};

/// Squared-lengthscale parameter of the Gaussian RBF kernel.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct KernelParam(f64);

impl KernelParam {
    pub fn new(theta: f64) -> Result<Self> {
        if theta.is_finite() && theta > 0.0 {
            Ok(KernelParam(theta))
        } else {
            Err(BktError::InvalidTheta(theta))
        }
    }

    #[inline]
    pub fn theta(self) -> f64 {
        self.0
    }
}

/// `n` paired observations `(x_i, y_i)` in `R^D`, stored as two `n x D` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
}

impl PairedDataset {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.shape() != y.shape() {
            return Err(BktError::Input(format!(
                "x is {}x{} but y is {}x{}",
                x.nrows(),
                x.ncols(),
                y.nrows(),
                y.ncols()
            )));
        }
        if x.nrows() < 2 {
            return Err(BktError::Input(format!(
                "need at least 2 paired rows, got {}",
                x.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(BktError::Input("observations have zero dimension".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(BktError::Input("dataset contains non-finite values".into()));
        }
        Ok(PairedDataset { x, y })
    }

    /// Builds a dataset from row vectors.
    pub fn from_rows(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<Self> {
        PairedDataset::new(rows_to_matrix(x)?, rows_to_matrix(y)?)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// The same pairs with the roles of `x` and `y` exchanged.
    pub fn swapped(&self) -> PairedDataset {
        PairedDataset {
            x: self.y.clone(),
            y: self.x.clone(),
        }
    }

    /// Pair `i` as owned row vectors.
    pub fn pair(&self, i: usize) -> (Vec<f64>, Vec<f64>) {
        (row(&self.x, i), row(&self.y, i))
    }
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(BktError::DimensionMismatch {
            expected: ncols,
            got: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub(crate) fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

/// Where an evaluation point was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalSource {
    X(usize),
    Y(usize),
}

/// The `s` inducing points at which the embeddings are compared.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoints {
    z: DMatrix<f64>,
    source_indices: Option<Vec<EvalSource>>,
}

impl EvalPoints {
    pub fn new(z: DMatrix<f64>) -> Result<Self> {
        if z.nrows() == 0 {
            return Err(BktError::Config("need at least one evaluation point".into()));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(BktError::Input("evaluation points contain non-finite values".into()));
        }
        Ok(EvalPoints {
            z,
            source_indices: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        EvalPoints::new(rows_to_matrix(rows)?)
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn s(&self) -> usize {
        self.z.nrows()
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn source_indices(&self) -> Option<&[EvalSource]> {
        self.source_indices.as_deref()
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(BktError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// `k(a, b) = exp(-|a - b|^2 / (2 theta))`.
pub fn gaussian_kernel(a: &[f64], b: &[f64], p: KernelParam) -> Result<f64> {
    check_dims(a, b)?;
    Ok((-sq_dist(a, b) / (2.0 * p.theta())).exp())
}

/// `r(a, b) = (pi theta)^(D/2) exp(-|a - b|^2 / (4 theta))` with `D = a.len()`.
pub fn r_kernel(a: &[f64], b: &[f64], p: KernelParam) -> Result<f64> {
    check_dims(a, b)?;
    Ok(r_scale(p, a.len()) * (-sq_dist(a, b) / (4.0 * p.theta())).exp())
}

#[inline]
pub(crate) fn r_scale(p: KernelParam, dim: usize) -> f64 {
    (PI * p.theta()).powf(dim as f64 / 2.0)
}

/// Which kernel a gram matrix is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    K,
    R,
}

/// Matrix of pairwise squared distances between the rows of `a` and `b`.
pub fn sq_dist_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(BktError::DimensionMismatch {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    let mut out = DMatrix::zeros(a.nrows(), b.nrows());
    for d in 0..a.ncols() {
        let ac = a.column(d);
        let bc = b.column(d);
        for j in 0..b.nrows() {
            let bj = bc[j];
            let col = out.column_mut(j);
            for (o, ai) in col.into_iter().zip(ac.iter()) {
                let diff = ai - bj;
                *o += diff * diff;
            }
        }
    }
    Ok(out)
}

/// Applies the chosen kernel entrywise to a precomputed squared-distance matrix.
pub(crate) fn kernel_from_sq(sq: &DMatrix<f64>, p: KernelParam, kind: KernelKind, dim: usize) -> DMatrix<f64> {
    match kind {
        KernelKind::K => {
            let c = -0.5 / p.theta();
            sq.map(|d| (c * d).exp())
        }
        KernelKind::R => {
            let c = -0.25 / p.theta();
            let scale = r_scale(p, dim);
            sq.map(|d| scale * (c * d).exp())
        }
    }
}

/// Gram matrix with entry `(i, j)` equal to the chosen kernel on rows `a_i`, `b_j`.
pub fn gram(a: &DMatrix<f64>, b: &DMatrix<f64>, p: KernelParam, kind: KernelKind) -> Result<DMatrix<f64>> {
    let sq = sq_dist_matrix(a, b)?;
    Ok(kernel_from_sq(&sq, p, kind, a.ncols()))
}

/// Median heuristic on the pooled sample: `theta = median |a - b|^2 / 2` over
/// all unordered pairs of distinct pooled points, so the kernel evaluated at
/// the median pair equals `exp(-1/2)`.
pub fn median_heuristic(data: &PairedDataset) -> Result<KernelParam> {
    let pooled: Vec<Vec<f64>> = (0..data.n())
        .map(|i| row(data.x(), i))
        .chain((0..data.n()).map(|i| row(data.y(), i)))
        .collect();
    let mut halved = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            halved.push(sq_dist(&pooled[i], &pooled[j]) / 2.0);
        }
    }
    if halved.iter().all(|&d| d == 0.0) {
        return Err(BktError::DegenerateData(
            "all pooled observations are identical; median heuristic undefined".into(),
        ));
    }
    let theta = median(&mut halved);
    if theta > 0.0 {
        KernelParam::new(theta)
    } else {
        // More than half the pairs coincide; fall back to the median of the
        // strictly positive distances so the kernel stays well defined.
        let mut positive: Vec<f64> = halved.into_iter().filter(|&d| d > 0.0).collect();
        KernelParam::new(median(&mut positive))
    }
}

fn median(values: &mut [f64]) -> f64 {
    let len = values.len();
    let mid = len / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if len % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Draws `s/2` rows from `x` and `s/2` rows from `y` without replacement.
pub fn subsample_eval_points(data: &PairedDataset, s: usize, seed: u64) -> Result<EvalPoints> {
    if s == 0 || !s.is_multiple_of(2) {
        return Err(BktError::Config(format!(
            "number of evaluation points must be even and positive, got {s}"
        )));
    }
    let half = s / 2;
    if half > data.n() {
        return Err(BktError::Config(format!(
            "cannot draw {half} evaluation points from each sample of size {}",
            data.n()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let from_x = sample(&mut rng, data.n(), half).into_vec();
    let from_y = sample(&mut rng, data.n(), half).into_vec();
    let dim = data.dim();
    let mut z = DMatrix::zeros(s, dim);
    let mut sources = Vec::with_capacity(s);
    for (k, &i) in from_x.iter().enumerate() {
        z.row_mut(k).copy_from(&data.x().row(i));
        sources.push(EvalSource::X(i));
    }
    for (k, &i) in from_y.iter().enumerate() {
        z.row_mut(half + k).copy_from(&data.y().row(i));
        sources.push(EvalSource::Y(i));
    }
    Ok(EvalPoints {
        z,
        source_indices: Some(sources),
    })
}

/// Witness vector and its per-pair building blocks at one `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct WitnessState {
    /// `delta_j = (1/n) sum_i G_ji`.
    pub delta: DVector<f64>,
    /// `s x n`, column `i` is `g(x_i, y_i) = k(x_i, z) - k(y_i, z)`.
    pub g: DMatrix<f64>,
    pub k_zx: DMatrix<f64>,
    pub k_zy: DMatrix<f64>,
}

impl WitnessState {
    pub fn n(&self) -> usize {
        self.g.ncols()
    }

    pub fn s(&self) -> usize {
        self.g.nrows()
    }

    pub(crate) fn from_grams(k_zx: DMatrix<f64>, k_zy: DMatrix<f64>) -> WitnessState {
        let g = &k_zx - &k_zy;
        let delta = row_means(&g);
        WitnessState { delta, g, k_zx, k_zy }
    }
}

pub(crate) fn row_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.ncols() as f64;
    let mut out = DVector::zeros(m.nrows());
    for col in m.column_iter() {
        out += col;
    }
    out / n
}

pub fn witness_state(data: &PairedDataset, z: &EvalPoints, p: KernelParam) -> Result<WitnessState> {
    if z.dim() != data.dim() {
        return Err(BktError::DimensionMismatch {
            expected: data.dim(),
            got: z.dim(),
        });
    }
    let k_zx = gram(z.z(), data.x(), p, KernelKind::K)?;
    let k_zy = gram(z.z(), data.y(), p, KernelKind::K)?;
    Ok(WitnessState::from_grams(k_zx, k_zy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p(theta: f64) -> KernelParam {
        KernelParam::new(theta).unwrap()
    }

    fn ds1(x: &[f64], y: &[f64]) -> PairedDataset {
        PairedDataset::new(
            DMatrix::from_column_slice(x.len(), 1, x),
            DMatrix::from_column_slice(y.len(), 1, y),
        )
        .unwrap()
    }

    #[test]
    fn gaussian_kernel_examples() {
        assert_eq!(gaussian_kernel(&[0.3, -2.0], &[0.3, -2.0], p(1.0)).unwrap(), 1.0);
        assert_relative_eq!(gaussian_kernel(&[1.0], &[0.0], p(0.5)).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(gaussian_kernel(&[1.0, 1.0], &[0.0, 0.0], p(1.0)).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn kernel_errors() {
        assert!(matches!(
            gaussian_kernel(&[1.0], &[0.0, 1.0], p(1.0)),
            Err(BktError::DimensionMismatch { .. })
        ));
        assert!(matches!(KernelParam::new(0.0), Err(BktError::InvalidTheta(_))));
        assert!(matches!(KernelParam::new(-1.0), Err(BktError::InvalidTheta(_))));
        assert!(matches!(KernelParam::new(f64::NAN), Err(BktError::InvalidTheta(_))));
    }

    #[test]
    fn r_kernel_examples() {
        assert_relative_eq!(r_kernel(&[0.7], &[0.7], p(1.0)).unwrap(), PI.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(r_kernel(&[1.0], &[0.0], p(1.0)).unwrap(), PI.sqrt() * (-0.25f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(r_kernel(&[1.0, 2.0], &[1.0, 2.0], p(1.0)).unwrap(), PI, epsilon = 1e-15);
    }

    #[test]
    fn gram_examples() {
        let a = DMatrix::from_row_slice(1, 1, &[2.0]);
        assert_eq!(gram(&a, &a, p(3.0), KernelKind::K).unwrap(), DMatrix::from_element(1, 1, 1.0));

        let a = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let b = DMatrix::from_row_slice(1, 1, &[0.0]);
        let k = gram(&a, &b, p(0.5), KernelKind::K).unwrap();
        assert_eq!(k.shape(), (2, 1));
        assert_relative_eq!(k[(0, 0)], 1.0);
        assert_relative_eq!(k[(1, 0)], (-1.0f64).exp(), epsilon = 1e-15);

        let rep = DMatrix::from_element(3, 1, 0.4);
        let r = gram(&rep, &rep, p(1.0), KernelKind::R).unwrap();
        for v in r.iter() {
            assert_relative_eq!(*v, PI.sqrt(), epsilon = 1e-15);
        }

        let c = DMatrix::from_element(1, 2, 0.0);
        assert!(gram(&a, &c, p(1.0), KernelKind::K).is_err());
    }

    #[test]
    fn median_heuristic_examples() {
        let theta = median_heuristic(&ds1(&[0.0, 2.0], &[0.0, 2.0])).unwrap();
        // pairs: (0,2)x4 -> 2, (0,0)->0, (2,2)->0 ; halved sorted {0,0,2,2,2,2} -> median 2
        assert_relative_eq!(theta.theta(), 2.0);

        let mut three = vec![0.5, 0.5, 2.0];
        assert_relative_eq!(median(&mut three), 0.5);

        let theta = median_heuristic(&ds1(&[0.0, 0.0], &[0.0, 3.0])).unwrap();
        assert!(theta.theta() > 0.0);

        assert!(matches!(
            median_heuristic(&ds1(&[1.0, 1.0], &[1.0, 1.0])),
            Err(BktError::DegenerateData(_))
        ));
    }

    #[test]
    fn median_heuristic_three_points() {
        // An odd number of pairs, from the pool {0, 1, 2}.
        let mut halved: Vec<f64> = [(0.0, 1.0), (0.0, 2.0), (1.0, 2.0)]
            .iter()
            .map(|(a, b): &(f64, f64)| (a - b) * (a - b) / 2.0)
            .collect();
        assert_relative_eq!(median(&mut halved), 0.5);
    }

    #[test]
    fn subsample_contract() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..100).map(|i| 1000.0 + i as f64).collect();
        let data = ds1(&x, &y);
        let z = subsample_eval_points(&data, 4, 7).unwrap();
        let src = z.source_indices().unwrap();
        assert_eq!(src.iter().filter(|s| matches!(s, EvalSource::X(_))).count(), 2);
        assert_eq!(src.iter().filter(|s| matches!(s, EvalSource::Y(_))).count(), 2);
        assert_ne!(src[0], src[1]);
        assert_ne!(src[2], src[3]);
        assert!(z.z()[(0, 0)] < 1000.0 && z.z()[(2, 0)] >= 1000.0);
        assert_eq!(z, subsample_eval_points(&data, 4, 7).unwrap());

        let small = ds1(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]);
        let full = subsample_eval_points(&small, 6, 1).unwrap();
        let mut got: Vec<f64> = full.z().iter().copied().collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);

        assert!(matches!(subsample_eval_points(&small, 3, 1), Err(BktError::Config(_))));
        assert!(matches!(subsample_eval_points(&small, 8, 1), Err(BktError::Config(_))));
    }

    #[test]
    fn witness_examples() {
        let data = ds1(&[0.2, -1.0, 3.0], &[0.2, -1.0, 3.0]);
        let z = EvalPoints::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let w = witness_state(&data, &z, p(0.7)).unwrap();
        assert!(w.delta.iter().all(|&v| v == 0.0));
        assert!(w.g.iter().all(|&v| v == 0.0));

        // n = 1 is below the dataset minimum, so build the state from grams directly.
        let z = DMatrix::from_element(1, 1, 0.0);
        let kx = gram(&z, &DMatrix::from_element(1, 1, 0.0), p(0.5), KernelKind::K).unwrap();
        let ky = gram(&z, &DMatrix::from_element(1, 1, 1.0), p(0.5), KernelKind::K).unwrap();
        let w = WitnessState::from_grams(kx, ky);
        assert_relative_eq!(w.delta[0], 1.0 - (-1.0f64).exp(), epsilon = 1e-15);
    }

    fn small_matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
    }

    proptest! {
        #[test]
        fn kernel_symmetric(a in prop::collection::vec(-5.0..5.0f64, 3), b in prop::collection::vec(-5.0..5.0f64, 3), theta in 0.01..50.0f64) {
            let k1 = gaussian_kernel(&a, &b, p(theta)).unwrap();
            let k2 = gaussian_kernel(&b, &a, p(theta)).unwrap();
            prop_assert_eq!(k1, k2);
            prop_assert!((0.0..=1.0).contains(&k1));
            prop_assert_eq!(r_kernel(&a, &b, p(theta)).unwrap(), r_kernel(&b, &a, p(theta)).unwrap());
        }

        #[test]
        fn gram_psd(a in (1usize..20, 1usize..4).prop_flat_map(|(r, c)| small_matrix(r, c)), theta in 0.05..20.0f64) {
            for kind in [KernelKind::K, KernelKind::R] {
                let g = gram(&a, &a, p(theta), kind).unwrap();
                let lmin = g.clone().symmetric_eigenvalues().min();
                prop_assert!(lmin >= -1e-8 * g.trace(), "lambda_min = {lmin}");
            }
        }

        #[test]
        fn witness_antisymmetric(x in small_matrix(6, 2), y in small_matrix(6, 2), zz in small_matrix(3, 2), theta in 0.1..10.0f64) {
            let data = PairedDataset::new(x, y).unwrap();
            let z = EvalPoints::new(zz).unwrap();
            let w = witness_state(&data, &z, p(theta)).unwrap();
            let ws = witness_state(&data.swapped(), &z, p(theta)).unwrap();
            prop_assert_eq!(&w.delta, &(-&ws.delta));
            prop_assert_eq!(&w.g, &(-&ws.g));
            let means = row_means(&w.g);
            for j in 0..w.s() {
                prop_assert!((means[j] - w.delta[j]).abs() <= 1e-15);
            }
        }

        #[test]
        fn median_scales_quadratically(x in small_matrix(5, 2), y in small_matrix(5, 2), c in 0.1..10.0f64) {
            let data = PairedDataset::new(x.clone(), y.clone()).unwrap();
            let scaled = PairedDataset::new(x * c, y * c).unwrap();
            let t1 = median_heuristic(&data).unwrap().theta();
            let t2 = median_heuristic(&scaled).unwrap().theta();
            prop_assert!((t2 - c * c * t1).abs() <= 1e-10 * t2.max(1.0));
        }
    }
}
