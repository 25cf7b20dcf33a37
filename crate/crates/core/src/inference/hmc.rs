//! Plain Hamiltonian Monte Carlo on a scalar parameter with dual-averaging
//! step-size adaptation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal as StdNormalDist;

use crate::error::{BktError, Result};

/// A differentiable scalar log density, up to an additive constant.
pub trait LogTarget {
    fn log_density(&self, u: f64) -> Result<f64>;

    /// Central finite differences unless overridden.
    fn grad(&self, u: f64) -> Result<f64> {
        let h = 1e-5 * u.abs().max(1.0);
        let up = self.log_density(u + h)?;
        let down = self.log_density(u - h)?;
        let g = (up - down) / (2.0 * h);
        if g.is_finite() {
            Ok(g)
        } else {
            Err(BktError::Numerical(format!("non-finite gradient at u = {u}")))
        }
    }
}

/// `log N(u; 0, 1)`, used to validate the sampler on a known target.
#[derive(Debug, Clone, Copy, Default)]
pub struct StandardNormal;

impl LogTarget for StandardNormal {
    fn log_density(&self, u: f64) -> Result<f64> {
        Ok(-0.5 * u * u)
    }
}

/// Position with its cached log density and gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmcState {
    pub u: f64,
    pub log_density: f64,
    pub grad: f64,
}

impl HmcState {
    pub fn at<T: LogTarget + ?Sized>(target: &T, u: f64) -> Result<Self> {
        let log_density = target.log_density(u)?;
        let grad = target.grad(u)?;
        if !log_density.is_finite() {
            return Err(BktError::Numerical(format!("log density is {log_density} at u = {u}")));
        }
        Ok(HmcState { u, log_density, grad })
    }
}

/// Outcome of one HMC transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmcStep {
    pub state: HmcState,
    pub accepted: bool,
    /// `min(1, exp(-dH))`, zero for a failed trajectory.
    pub accept_prob: f64,
    /// The trajectory hit a non-finite or failed evaluation and was rejected.
    pub nonfinite: bool,
    /// `H(end) - H(start)`.
    pub energy_error: f64,
}

/// Leapfrog integration of `(u, p)` for `steps` steps of size `eps`.
pub fn leapfrog<T: LogTarget + ?Sized>(target: &T, start: HmcState, p0: f64, eps: f64, steps: usize) -> Result<(HmcState, f64)> {
    let mut u = start.u;
    let mut p = p0 + 0.5 * eps * start.grad;
    let mut grad = start.grad;
    for i in 0..steps {
        u += eps * p;
        if !u.is_finite() {
            return Err(BktError::Numerical("leapfrog position diverged".into()));
        }
        grad = target.grad(u)?;
        if i + 1 < steps {
            p += eps * grad;
        }
    }
    p += 0.5 * eps * grad;
    let log_density = target.log_density(u)?;
    Ok((HmcState { u, log_density, grad }, p))
}

/// One Metropolis-corrected HMC transition.
pub fn hmc_update<T: LogTarget + ?Sized>(
    current: HmcState,
    target: &T,
    step_size: f64,
    leapfrog_steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<HmcStep> {
    if leapfrog_steps == 0 {
        return Err(BktError::Config("leapfrog_steps must be at least 1".into()));
    }
    if !(step_size.is_finite() && step_size > 0.0) {
        return Err(BktError::Config(format!("step size must be positive, got {step_size}")));
    }
    let p0: f64 = rng.sample(StdNormalDist);
    let h0 = -current.log_density + 0.5 * p0 * p0;
    let draw: f64 = rng.gen();
    let rejected = |nonfinite: bool, energy_error: f64| HmcStep {
        state: current,
        accepted: false,
        accept_prob: 0.0,
        nonfinite,
        energy_error,
    };
    let (prop, p1) = match leapfrog(target, current, p0, step_size, leapfrog_steps) {
        Ok(v) => v,
        Err(_) => return Ok(rejected(true, f64::INFINITY)),
    };
    let h1 = -prop.log_density + 0.5 * p1 * p1;
    let de = h1 - h0;
    if !de.is_finite() || !prop.grad.is_finite() {
        return Ok(rejected(true, f64::INFINITY));
    }
    let accept_prob = (-de).exp().min(1.0);
    if draw < accept_prob {
        Ok(HmcStep {
            state: prop,
            accepted: true,
            accept_prob,
            nonfinite: false,
            energy_error: de,
        })
    } else {
        Ok(HmcStep {
            accept_prob,
            ..rejected(false, de)
        })
    }
}

/// Nesterov dual averaging of `log step_size` towards a target acceptance
/// probability.
#[derive(Debug, Clone, PartialEq)]
pub struct DualAverage {
    mu: f64,
    target_accept: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    count: u64,
    h_bar: f64,
    log_step: f64,
    log_step_bar: f64,
}

impl DualAverage {
    pub fn new(initial_step: f64, target_accept: f64) -> Self {
        DualAverage {
            mu: (10.0 * initial_step).ln(),
            target_accept,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            count: 0,
            h_bar: 0.0,
            log_step: initial_step.ln(),
            log_step_bar: initial_step.ln(),
        }
    }

    /// Step size to use for the next adaptive transition.
    pub fn current(&self) -> f64 {
        self.log_step.exp()
    }

    /// Averaged step size, used once adaptation stops.
    pub fn averaged(&self) -> f64 {
        self.log_step_bar.exp()
    }

    pub fn update(&mut self, accept_prob: f64) {
        self.count += 1;
        let t = self.count as f64;
        let w = 1.0 / (t + self.t0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target_accept - accept_prob);
        // Keep the step inside a range where the integrator stays meaningful.
        self.log_step = (self.mu - t.sqrt() / self.gamma * self.h_bar).clamp(-20.0, 3.0);
        let eta = t.powf(-self.kappa);
        self.log_step_bar = eta * self.log_step + (1.0 - eta) * self.log_step_bar;
    }
}

/// Draws from a single HMC chain: `warmup` adaptive transitions followed by
/// `draws` transitions at the averaged step size.
#[derive(Debug, Clone, PartialEq)]
pub struct HmcChain {
    pub samples: Vec<f64>,
    pub acceptance_rate: f64,
    pub step_size: f64,
    pub nonfinite: usize,
}

pub fn run_hmc_chain<T: LogTarget + ?Sized>(
    target: &T,
    u0: f64,
    warmup: usize,
    draws: usize,
    leapfrog_steps: usize,
    seed: u64,
) -> Result<HmcChain> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = HmcState::at(target, u0)?;
    let mut da = DualAverage::new(0.1, 0.8);
    let mut nonfinite = 0;
    for _ in 0..warmup {
        let step = hmc_update(state, target, da.current(), leapfrog_steps, &mut rng)?;
        da.update(step.accept_prob);
        nonfinite += step.nonfinite as usize;
        state = step.state;
    }
    let eps = if warmup > 0 { da.averaged() } else { 0.1 };
    let mut samples = Vec::with_capacity(draws);
    let mut accepted = 0;
    for _ in 0..draws {
        let step = hmc_update(state, target, eps, leapfrog_steps, &mut rng)?;
        accepted += step.accepted as usize;
        nonfinite += step.nonfinite as usize;
        state = step.state;
        samples.push(state.u);
    }
    Ok(HmcChain {
        samples,
        acceptance_rate: if draws > 0 { accepted as f64 / draws as f64 } else { 0.0 },
        step_size: eps,
        nonfinite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic(f64);

    impl LogTarget for Quadratic {
        fn log_density(&self, u: f64) -> Result<f64> {
            Ok(-0.5 * self.0 * u * u)
        }
        fn grad(&self, u: f64) -> Result<f64> {
            Ok(-self.0 * u)
        }
    }

    struct Broken;

    impl LogTarget for Broken {
        fn log_density(&self, u: f64) -> Result<f64> {
            if u > 0.5 {
                Err(BktError::Numerical("outside support".into()))
            } else {
                Ok(-u * u)
            }
        }
    }

    #[test]
    fn zero_leapfrog_steps_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let st = HmcState::at(&StandardNormal, 0.0).unwrap();
        assert!(matches!(hmc_update(st, &StandardNormal, 0.1, 0, &mut rng), Err(BktError::Config(_))));
    }

    #[test]
    fn fd_gradient_matches_analytic() {
        for u in [-3.0, -0.2, 0.0, 1.7] {
            let fd = StandardNormal.grad(u).unwrap();
            assert!((fd + u).abs() < 1e-8);
        }
    }

    #[test]
    fn energy_conserved_for_small_steps() {
        let t = Quadratic(2.0);
        let start = HmcState::at(&t, 0.7).unwrap();
        let p0 = 0.3;
        let (end, p1) = leapfrog(&t, start, p0, 1e-3, 1000).unwrap();
        let h0 = -start.log_density + 0.5 * p0 * p0;
        let h1 = -end.log_density + 0.5 * p1 * p1;
        assert!((h1 - h0).abs() < 1e-4);
    }

    #[test]
    fn leapfrog_is_reversible() {
        let t = Quadratic(1.3);
        let start = HmcState::at(&t, -0.4).unwrap();
        let (end, p1) = leapfrog(&t, start, 0.9, 0.1, 25).unwrap();
        let (back, p2) = leapfrog(&t, end, -p1, 0.1, 25).unwrap();
        assert!((back.u - start.u).abs() < 1e-12);
        assert!((p2 + 0.9).abs() < 1e-12);
    }

    #[test]
    fn failed_trajectories_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut st = HmcState::at(&Broken, 0.0).unwrap();
        let mut failed = 0;
        for _ in 0..200 {
            let step = hmc_update(st, &Broken, 0.5, 5, &mut rng).unwrap();
            failed += step.nonfinite as usize;
            st = step.state;
            assert!(st.u <= 0.5);
        }
        assert!(failed > 0);
    }

    #[test]
    fn dual_average_moves_towards_target() {
        let mut da = DualAverage::new(1.0, 0.8);
        for _ in 0..50 {
            da.update(0.0);
        }
        assert!(da.averaged() < 1.0);
        let mut da = DualAverage::new(1e-3, 0.8);
        for _ in 0..50 {
            da.update(1.0);
        }
        assert!(da.averaged() > 1e-3);
    }

    #[test]
    fn standard_normal_moments() {
        let chain = run_hmc_chain(&StandardNormal, 0.0, 200, 10_000, 10, 17).unwrap();
        let n = chain.samples.len() as f64;
        let mean = chain.samples.iter().sum::<f64>() / n;
        let var = chain.samples.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / n;
        // HMC draws are close to independent here; allow a generous factor for autocorrelation.
        assert!(mean.abs() < 4.0 / n.sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 6.0 * (2.0 / n).sqrt(), "var {var}");
    }
}
