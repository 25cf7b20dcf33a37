//! Seeded generators for the synthetic scenario families.

use nalgebra::{DMatrix, Matrix2, Vector2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::f64::consts::FRAC_PI_2;

use crate::error::{BktError, Result};
use crate::kernel::PairedDataset;

/// One component of a univariate Gaussian mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub var: f64,
}

fn default_dim() -> usize {
    1
}

fn default_mean_y() -> [f64; 2] {
    [10.0, 10.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// Isotropic Gaussians `N(mean_x 1, var_x I)` against `N(mean_y 1, var_y I)`.
    Gauss1d {
        mean_x: f64,
        var_x: f64,
        mean_y: f64,
        var_y: f64,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// `N(0, 1)` against `Laplace(0, scale)`.
    Laplace1d { scale: f64 },
    /// `N(0, 1)` and `Laplace(0, scale)` joined by a Gaussian copula with correlation `rho`.
    CopulaCorr { rho: f64, scale: f64 },
    /// Two univariate Gaussian mixtures.
    Mixture1d { x: Vec<Component>, y: Vec<Component> },
    /// `N((10, 10), I)` against `N(mean_y, Q S_eps Q^T)` with `Q` a quarter turn.
    Gauss2dRot {
        #[serde(default = "default_mean_y")]
        mean_y: [f64; 2],
        eps: f64,
    },
    /// Four isotropic blobs against the same blobs shifted by `(-1, -1)` with covariance `Sigma(eps)`.
    Blobs2x2 { eps: f64 },
    /// [`Family::Blobs2x2`] with `extra_dims` standard normal columns appended to both samples.
    Padded { eps: f64, extra_dims: usize },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Gauss1d { .. } => "gauss1d",
            Family::Laplace1d { .. } => "laplace1d",
            Family::CopulaCorr { .. } => "copula_corr",
            Family::Mixture1d { .. } => "mixture1d",
            Family::Gauss2dRot { .. } => "gauss2d_rot",
            Family::Blobs2x2 { .. } => "blobs2x2",
            Family::Padded { .. } => "padded",
        }
    }

    /// Parameters of the null setting of each family, used as a base when
    /// building a scenario from the command line.
    pub fn defaults(name: &str) -> Result<Family> {
        let unit = Component { weight: 0.5, mean: 0.0, var: 1.0 };
        let far = Component { weight: 0.5, mean: 4.0, var: 1.0 };
        Ok(match name {
            "gauss1d" => Family::Gauss1d { mean_x: 0.0, var_x: 1.0, mean_y: 0.0, var_y: 1.0, dim: 1 },
            "laplace1d" => Family::Laplace1d { scale: 1.5 },
            "copula_corr" => Family::CopulaCorr { rho: 0.5, scale: 1.5 },
            "mixture1d" => Family::Mixture1d { x: vec![unit, far], y: vec![unit, far] },
            "gauss2d_rot" => Family::Gauss2dRot { mean_y: [10.0, 10.0], eps: 1.0 },
            "blobs2x2" => Family::Blobs2x2 { eps: 1.0 },
            "padded" => Family::Padded { eps: 6.0, extra_dims: 1 },
            other => return Err(BktError::Config(format!("unknown scenario family '{other}'"))),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Family::Gauss1d { dim, .. } => *dim,
            Family::Laplace1d { .. } | Family::CopulaCorr { .. } | Family::Mixture1d { .. } => 1,
            Family::Gauss2dRot { .. } | Family::Blobs2x2 { .. } => 2,
            Family::Padded { extra_dims, .. } => 2 + extra_dims,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(flatten)]
    pub family: Family,
    pub n: usize,
    pub seed: u64,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(BktError::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(BktError::Config(format!("{name} must be finite, got {v}")))
    }
}

fn check_mixture(which: &str, comps: &[Component]) -> Result<()> {
    if comps.is_empty() {
        return Err(BktError::Config(format!("mixture {which} has no components")));
    }
    for c in comps {
        positive(&format!("{which} weight"), c.weight)?;
        positive(&format!("{which} variance"), c.var)?;
        finite(&format!("{which} mean"), c.mean)?;
    }
    Ok(())
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(BktError::Config(format!("n must be at least 2, got {}", self.n)));
        }
        match &self.family {
            Family::Gauss1d { mean_x, var_x, mean_y, var_y, dim } => {
                finite("mean_x", *mean_x)?;
                finite("mean_y", *mean_y)?;
                positive("var_x", *var_x)?;
                positive("var_y", *var_y)?;
                if *dim == 0 {
                    return Err(BktError::Config("dim must be at least 1".into()));
                }
            }
            Family::Laplace1d { scale } => positive("scale", *scale)?,
            Family::CopulaCorr { rho, scale } => {
                positive("scale", *scale)?;
                if !(rho.is_finite() && rho.abs() < 1.0) {
                    return Err(BktError::Config(format!("rho must lie in (-1, 1), got {rho}")));
                }
            }
            Family::Mixture1d { x, y } => {
                check_mixture("x", x)?;
                check_mixture("y", y)?;
            }
            Family::Gauss2dRot { mean_y, eps } => {
                finite("mean_y", mean_y[0])?;
                finite("mean_y", mean_y[1])?;
                check_eps(*eps)?;
            }
            Family::Blobs2x2 { eps } | Family::Padded { eps, .. } => {
                check_eps(*eps)?;
                if !self.n.is_multiple_of(4) {
                    return Err(BktError::Config(format!(
                        "blob scenarios need n divisible by 4, got {}",
                        self.n
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps.is_finite() && eps >= 1.0) {
        return Err(BktError::Config(format!("eps must be >= 1, got {eps}")));
    }
    Ok(())
}

/// Quarter-turn rotation `[[cos, sin], [-sin, cos]]` at `pi / 2`.
pub fn rotation() -> Matrix2<f64> {
    let (s, c) = FRAC_PI_2.sin_cos();
    Matrix2::new(c, s, -s, c)
}

/// `Sigma(eps) = Q diag(eps, 1) Q^T`.
pub fn rotated_cov(eps: f64) -> Matrix2<f64> {
    let q = rotation();
    q * Matrix2::new(eps, 0.0, 0.0, 1.0) * q.transpose()
}

/// Inverse CDF of `Laplace(0, scale)` written in terms of the standard normal
/// draw `z` that feeds it, accurate in both tails.
fn laplace_from_normal(z: f64, scale: f64) -> f64 {
    // log of twice the normal tail beyond |z|; the asymptotic series takes
    // over before erfc underflows.
    let a = z.abs();
    let log_two_tail = if a < 30.0 {
        erfc(a / std::f64::consts::SQRT_2).ln()
    } else {
        let a2 = a * a;
        -0.5 * a2 - (a * (std::f64::consts::PI / 2.0).sqrt()).ln() + (1.0 - 1.0 / a2 + 3.0 / (a2 * a2)).ln()
    };
    let magnitude = -scale * log_two_tail;
    if z < 0.0 {
        -magnitude
    } else {
        magnitude
    }
}

fn laplace(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let u: f64 = rng.gen::<f64>() - 0.5;
    let m = -scale * (1.0 - 2.0 * u.abs()).ln();
    if u < 0.0 {
        -m
    } else {
        m
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn mixture(rng: &mut ChaCha8Rng, comps: &[Component]) -> f64 {
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    let mut u = rng.gen::<f64>() * total;
    let mut pick = comps[comps.len() - 1];
    for c in comps {
        if u < c.weight {
            pick = *c;
            break;
        }
        u -= c.weight;
    }
    pick.mean + pick.var.sqrt() * normal(rng)
}

fn gauss2(rng: &mut ChaCha8Rng, mean: Vector2<f64>, eps: f64) -> Vector2<f64> {
    // Q diag(sqrt(eps), 1) is a square root of Sigma(eps).
    let e = Vector2::new(eps.sqrt() * normal(rng), normal(rng));
    mean + rotation() * e
}

const BLOB_CENTERS: [(f64, f64); 4] = [(10.0, 10.0), (10.0, 30.0), (30.0, 10.0), (30.0, 30.0)];

fn blobs(rng: &mut ChaCha8Rng, n: usize, eps: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let per = n / 4;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for &(cx, cy) in &BLOB_CENTERS {
        for _ in 0..per {
            xs.push(gauss2(rng, Vector2::new(cx, cy), 1.0));
            ys.push(gauss2(rng, Vector2::new(cx - 1.0, cy - 1.0), eps));
        }
    }
    xs.shuffle(rng);
    ys.shuffle(rng);
    let to_m = |v: &[Vector2<f64>]| DMatrix::from_fn(v.len(), 2, |i, j| v[i][j]);
    (to_m(&xs), to_m(&ys))
}

fn pad(m: &DMatrix<f64>, extra: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (n, d) = m.shape();
    let mut out = m.clone().resize_horizontally(d + extra, 0.0);
    for i in 0..n {
        for j in d..d + extra {
            out[(i, j)] = normal(rng);
        }
    }
    out
}

/// Draws a paired dataset from `spec`.
pub fn gen(spec: &ScenarioSpec) -> Result<PairedDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let (x, y) = match &spec.family {
        &Family::Gauss1d { mean_x, var_x, mean_y, var_y, dim } => {
            let x = DMatrix::from_fn(n, dim, |_, _| mean_x + var_x.sqrt() * normal(&mut rng));
            let y = DMatrix::from_fn(n, dim, |_, _| mean_y + var_y.sqrt() * normal(&mut rng));
            (x, y)
        }
        &Family::Laplace1d { scale } => {
            let x = DMatrix::from_fn(n, 1, |_, _| normal(&mut rng));
            let y = DMatrix::from_fn(n, 1, |_, _| laplace(&mut rng, scale));
            (x, y)
        }
        &Family::CopulaCorr { rho, scale } => {
            let mut x = DMatrix::zeros(n, 1);
            let mut y = DMatrix::zeros(n, 1);
            for i in 0..n {
                let z1 = normal(&mut rng);
                let z2 = rho * z1 + (1.0 - rho * rho).sqrt() * normal(&mut rng);
                x[(i, 0)] = z1;
                y[(i, 0)] = laplace_from_normal(z2, scale);
            }
            (x, y)
        }
        Family::Mixture1d { x: cx, y: cy } => {
            let x = DMatrix::from_fn(n, 1, |_, _| mixture(&mut rng, cx));
            let y = DMatrix::from_fn(n, 1, |_, _| mixture(&mut rng, cy));
            (x, y)
        }
        &Family::Gauss2dRot { mean_y, eps } => {
            let mut x = DMatrix::zeros(n, 2);
            let mut y = DMatrix::zeros(n, 2);
            let my = Vector2::new(mean_y[0], mean_y[1]);
            for i in 0..n {
                let a = gauss2(&mut rng, Vector2::new(10.0, 10.0), 1.0);
                let b = gauss2(&mut rng, my, eps);
                for j in 0..2 {
                    x[(i, j)] = a[j];
                    y[(i, j)] = b[j];
                }
            }
            (x, y)
        }
        &Family::Blobs2x2 { eps } => blobs(&mut rng, n, eps),
        &Family::Padded { eps, extra_dims } => {
            let (x, y) = blobs(&mut rng, n, eps);
            let x = pad(&x, extra_dims, &mut rng);
            let y = pad(&y, extra_dims, &mut rng);
            (x, y)
        }
    };
    PairedDataset::new(x, y)
}

/// Per-column sample means and (unbiased) variances of both samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Moments {
    pub x_mean: Vec<f64>,
    pub x_var: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_var: Vec<f64>,
}

fn column_moments(m: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = m.nrows() as f64;
    m.column_iter()
        .map(|c| {
            let mean = c.sum() / n;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (mean, var)
        })
        .unzip()
}

pub fn empirical_moments(data: &PairedDataset) -> Moments {
    let (x_mean, x_var) = column_moments(data.x());
    let (y_mean, y_var) = column_moments(data.y());
    Moments { x_mean, x_var, y_mean, y_var }
}
