//! Metropolis-Hastings-within-Gibbs over `(theta, M)`: HMC on `u = log theta`
//! given the model label, then a Bernoulli draw of the label given `theta`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::hmc::{hmc_update, DualAverage, HmcState, LogTarget};
use super::{posterior_h1, Hypothesis};
use crate::error::{BktError, Result};
use crate::kernel::{median_heuristic, KernelParam};
use crate::likelihood::Evaluator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Outer Gibbs sweeps.
    pub m_tilde: usize,
    /// HMC transitions per sweep.
    pub n_tilde: usize,
    /// Adaptive transitions at the start of each burn-in sweep.
    pub warmup_inner: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub prior_shape: f64,
    pub prior_rate: f64,
    pub leapfrog_steps: usize,
    pub init_step_size: f64,
    pub target_accept: f64,
    /// `P(H1) / P(H0)`.
    pub prior_odds: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            m_tilde: 2000,
            n_tilde: 9,
            warmup_inner: 3,
            burnin: 500,
            thin: 2,
            seed: 0,
            prior_shape: 2.0,
            prior_rate: 2.0,
            leapfrog_steps: 10,
            init_step_size: 0.1,
            target_accept: 0.8,
            prior_odds: 1.0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(BktError::Config(m));
        if self.m_tilde <= self.burnin {
            return fail(format!("iterations ({}) must exceed burn-in ({})", self.m_tilde, self.burnin));
        }
        if self.thin == 0 {
            return fail("thin must be at least 1".into());
        }
        if self.n_tilde == 0 {
            return fail("at least one HMC step per sweep is required".into());
        }
        if self.warmup_inner > self.n_tilde {
            return fail(format!(
                "warmup_inner ({}) cannot exceed the HMC steps per sweep ({})",
                self.warmup_inner, self.n_tilde
            ));
        }
        if self.leapfrog_steps == 0 {
            return fail("leapfrog_steps must be at least 1".into());
        }
        for (name, v) in [
            ("prior_shape", self.prior_shape),
            ("prior_rate", self.prior_rate),
            ("init_step_size", self.init_step_size),
            ("prior_odds", self.prior_odds),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return fail(format!("target_accept must lie in (0, 1), got {}", self.target_accept));
        }
        Ok(())
    }

    /// Number of samples kept after burn-in and thinning.
    pub fn retained(&self) -> usize {
        (self.m_tilde - self.burnin).div_ceil(self.thin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainOutput {
    /// Sweep index of every retained sample.
    pub iters: Vec<usize>,
    pub theta_samples: Vec<f64>,
    pub m_samples: Vec<Hypothesis>,
    pub log_bf_trace: Vec<f64>,
    /// Fraction of retained labels equal to `H1`.
    pub p_h1: f64,
    /// Acceptance rate of the non-adaptive HMC transitions.
    pub acceptance_rate: f64,
    /// Trajectories rejected because an evaluation failed or diverged.
    pub rejected_nonfinite: usize,
    pub theta0: f64,
    pub step_size_h0: f64,
    pub step_size_h1: f64,
    pub max_ridge: f64,
}

/// `log Gamma(theta; shape, rate)` density.
pub fn log_prior_theta(theta: f64, shape: f64, rate: f64) -> f64 {
    if theta <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * theta.ln() - rate * theta
}

/// `log p(D | theta, M) + log p(theta)` on the `theta` scale. With `ev = None`
/// the likelihood is taken as constant, leaving only the prior.
pub fn log_target_theta(ev: Option<&Evaluator>, theta: f64, model: Hypothesis, shape: f64, rate: f64) -> Result<f64> {
    let p = KernelParam::new(theta)?;
    let ll = match ev {
        Some(ev) => ev.loglik(p, model)?,
        None => 0.0,
    };
    let v = ll + log_prior_theta(theta, shape, rate);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(BktError::Numerical(format!("log target is {v} at theta = {theta}")))
    }
}

/// Conditional target of `u = log theta` given the model, including the
/// `log theta` change-of-variable term.
#[derive(Debug, Clone, Copy)]
pub struct ThetaTarget<'a> {
    pub ev: Option<&'a Evaluator>,
    pub model: Hypothesis,
    pub shape: f64,
    pub rate: f64,
}

impl ThetaTarget<'_> {
    fn on_theta(&self, theta: f64) -> Result<f64> {
        log_target_theta(self.ev, theta, self.model, self.shape, self.rate)
    }
}

impl LogTarget for ThetaTarget<'_> {
    fn log_density(&self, u: f64) -> Result<f64> {
        let theta = u.exp();
        Ok(self.on_theta(theta)? + u)
    }

    /// Central differences in `u` with step `1e-3`. The objective carries
    /// rounding noise near `1e-6` when the covariance is ill conditioned, so
    /// smaller steps trade truncation error for amplified noise.
    fn grad(&self, u: f64) -> Result<f64> {
        const H: f64 = 1e-3;
        let g = (self.log_density(u + H)? - self.log_density(u - H)?) / (2.0 * H);
        if g.is_finite() {
            Ok(g)
        } else {
            Err(BktError::Numerical(format!("non-finite gradient at u = {u}")))
        }
    }
}

/// Seed for replicate `index` of a run seeded with `seed` (SplitMix64 mixing).
pub fn replicate_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn draw_model(log_bf: f64, prior_odds: f64, rng: &mut ChaCha8Rng) -> Hypothesis {
    if rng.gen::<f64>() < posterior_h1(log_bf, prior_odds) {
        Hypothesis::H1
    } else {
        Hypothesis::H0
    }
}

/// Joint posterior sampling of the kernel parameter and the hypothesis label.
pub fn gibbs_run(ev: &Evaluator, cfg: &ChainConfig) -> Result<ChainOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let theta0 = median_heuristic(ev.data())?.theta();
    let (log_bf0, ridge0) = ev.log_bf_and_ridge(KernelParam::new(theta0)?)?;
    let mut model = draw_model(log_bf0, cfg.prior_odds, &mut rng);
    let mut max_ridge = ridge0;

    let mut adapt = [
        DualAverage::new(cfg.init_step_size, cfg.target_accept),
        DualAverage::new(cfg.init_step_size, cfg.target_accept),
    ];
    let mut u = theta0.ln();
    let mut accepted = 0usize;
    let mut fixed_steps = 0usize;
    let mut rejected_nonfinite = 0usize;

    let keep = cfg.retained();
    let mut out = ChainOutput {
        iters: Vec::with_capacity(keep),
        theta_samples: Vec::with_capacity(keep),
        m_samples: Vec::with_capacity(keep),
        log_bf_trace: Vec::with_capacity(keep),
        p_h1: 0.0,
        acceptance_rate: 0.0,
        rejected_nonfinite: 0,
        theta0,
        step_size_h0: 0.0,
        step_size_h1: 0.0,
        max_ridge: 0.0,
    };

    for it in 0..cfg.m_tilde {
        let target = ThetaTarget {
            ev: Some(ev),
            model,
            shape: cfg.prior_shape,
            rate: cfg.prior_rate,
        };
        let da = &mut adapt[model.as_index() as usize];
        match HmcState::at(&target, u) {
            Ok(mut state) => {
                for k in 0..cfg.n_tilde {
                    let adapting = it < cfg.burnin && k < cfg.warmup_inner;
                    let eps = if adapting { da.current() } else { da.averaged() };
                    let step = hmc_update(state, &target, eps, cfg.leapfrog_steps, &mut rng)?;
                    if adapting {
                        da.update(step.accept_prob);
                    } else {
                        fixed_steps += 1;
                        accepted += step.accepted as usize;
                    }
                    rejected_nonfinite += step.nonfinite as usize;
                    state = step.state;
                }
                u = state.u;
            }
            // The current point cannot be evaluated under this model; every
            // proposal from it is rejected.
            Err(_) => {
                rejected_nonfinite += cfg.n_tilde;
                if it >= cfg.burnin {
                    fixed_steps += cfg.n_tilde;
                }
            }
        }

        let theta = u.exp();
        let (log_bf, ridge) = ev.log_bf_and_ridge(KernelParam::new(theta)?)?;
        max_ridge = max_ridge.max(ridge);
        model = draw_model(log_bf, cfg.prior_odds, &mut rng);

        if it >= cfg.burnin && (it - cfg.burnin).is_multiple_of(cfg.thin) {
            out.iters.push(it);
            out.theta_samples.push(theta);
            out.m_samples.push(model);
            out.log_bf_trace.push(log_bf);
        }
    }

    let h1 = out.m_samples.iter().filter(|&&m| m == Hypothesis::H1).count();
    out.p_h1 = h1 as f64 / out.m_samples.len() as f64;
    out.acceptance_rate = if fixed_steps > 0 { accepted as f64 / fixed_steps as f64 } else { 0.0 };
    out.rejected_nonfinite = rejected_nonfinite;
    out.step_size_h0 = adapt[0].averaged();
    out.step_size_h1 = adapt[1].averaged();
    out.max_ridge = max_ridge;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::SigmaMethod;
    use crate::jacobian::JacobianPolicy;
    use crate::kernel::{subsample_eval_points, PairedDataset};
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, Normal};

    fn problem(seed: u64, n: usize, shift: f64, scale: f64) -> Evaluator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let norm = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![norm.sample(&mut rng)]).collect();
        let y: Vec<Vec<f64>> = (0..n).map(|_| vec![shift + scale * norm.sample(&mut rng)]).collect();
        let data = PairedDataset::from_rows(&x, &y).unwrap();
        let z = subsample_eval_points(&data, 10, seed).unwrap();
        Evaluator::new(data, z, SigmaMethod::Method2, JacobianPolicy::Strict).unwrap()
    }

    fn short(seed: u64) -> ChainConfig {
        ChainConfig {
            m_tilde: 60,
            burnin: 20,
            seed,
            ..ChainConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(ChainConfig::default().validate().is_ok());
        let bad = [
            ChainConfig { burnin: 2000, ..ChainConfig::default() },
            ChainConfig { thin: 0, ..ChainConfig::default() },
            ChainConfig { n_tilde: 0, warmup_inner: 0, ..ChainConfig::default() },
            ChainConfig { leapfrog_steps: 0, ..ChainConfig::default() },
            ChainConfig { prior_rate: -1.0, ..ChainConfig::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(BktError::Config(_))), "{c:?}");
        }
        assert_eq!(ChainConfig::default().retained(), 750);
    }

    #[test]
    fn gamma_prior_density() {
        // Gamma(2, 2): 4 theta exp(-2 theta).
        assert_relative_eq!(log_prior_theta(0.7, 2.0, 2.0), (4.0 * 0.7 * (-1.4f64).exp()).ln(), epsilon = 1e-12);
        assert_eq!(log_prior_theta(0.0, 2.0, 2.0), f64::NEG_INFINITY);
        assert!(log_prior_theta(1e-300, 2.0, 2.0) < -600.0);
    }

    #[test]
    fn target_gradient_matches_finite_differences() {
        let ev = problem(3, 30, 0.5, 1.0);
        for model in [Hypothesis::H0, Hypothesis::H1] {
            let t = ThetaTarget { ev: Some(&ev), model, shape: 2.0, rate: 2.0 };
            for u in [-0.7, 0.0, 0.8] {
                // Richardson-extrapolated central differences in u.
                let cd = |h: f64| (t.log_density(u + h).unwrap() - t.log_density(u - h).unwrap()) / (2.0 * h);
                let fd = (4.0 * cd(4e-3) - cd(8e-3)) / 3.0;
                let g = t.grad(u).unwrap();
                assert!((g - fd).abs() <= 2e-5 * fd.abs().max(1.0), "{model}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn replicate_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| replicate_seed(42, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_eq!(replicate_seed(42, 3), replicate_seed(42, 3));
    }

    #[test]
    fn chain_is_deterministic() {
        let ev = problem(8, 25, 0.5, 1.0);
        let a = gibbs_run(&ev, &short(5)).unwrap();
        let b = gibbs_run(&ev, &short(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.theta_samples.len(), short(5).retained());
        assert!(a.theta_samples.iter().all(|t| *t > 0.0));
    }

    #[test]
    fn identical_samples_favour_h0() {
        let ev = problem(4, 30, 0.0, 1.0);
        let same = PairedDataset::new(ev.data().x().clone(), ev.data().x().clone()).unwrap();
        let z = subsample_eval_points(&same, 10, 1).unwrap();
        let ev = Evaluator::new(same, z, SigmaMethod::Method2, JacobianPolicy::Clamp).unwrap();
        let out = gibbs_run(&ev, &short(2)).unwrap();
        assert!(out.p_h1 <= 0.05, "p_h1 = {}", out.p_h1);
    }

    #[test]
    fn large_shift_favours_h1() {
        let ev = problem(6, 60, 3.0, 1.0);
        let out = gibbs_run(&ev, &short(7)).unwrap();
        assert!(out.p_h1 >= 0.95, "p_h1 = {}", out.p_h1);
    }
}
