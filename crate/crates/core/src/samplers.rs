//! Equilibrium sampling of the Gibbs measure `π ∝ exp(-βH)` and of its
//! position marginal.
//!
//! [`hmc_chain`] is Hamiltonian Monte Carlo with optional partial momentum
//! refresh and momentum flips on rejection. [`overdamped_chain`] is
//! Euler–Maruyama for `dq = -∇U dt + √(2/β) dB` with the same collision
//! guard as the kinetic integrators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrators::{bridge, guard_accepts};
use crate::kernels::InteractionKernel;
use crate::potentials::ConfiningPotential;
use crate::rng::StreamRng;
use crate::system::{ParticleState, SystemParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HmcConfig {
    pub leapfrog_steps: usize,
    pub leapfrog_dt: f64,
    /// Refresh weight `r` in `p ← √(1 - r²) p + r ξ/√β`; 1 is a full refresh.
    pub momentum_refresh: f64,
    pub seed: u64,
    pub n_samples: usize,
    pub burn_in: usize,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            leapfrog_steps: 10,
            leapfrog_dt: 0.05,
            momentum_refresh: 1.0,
            seed: 0,
            n_samples: 1000,
            burn_in: 100,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid = |field: &str, message: String| Error::Validation {
            field: format!("sampler.{field}"),
            message,
        };
        if self.leapfrog_steps == 0 {
            return Err(invalid("leapfrog_steps", "must be >= 1".into()));
        }
        if !(self.leapfrog_dt > 0.0 && self.leapfrog_dt.is_finite()) {
            return Err(invalid(
                "leapfrog_dt",
                format!("must be positive, got {}", self.leapfrog_dt),
            ));
        }
        if !(self.momentum_refresh > 0.0 && self.momentum_refresh <= 1.0) {
            return Err(invalid(
                "momentum_refresh",
                format!("must lie in (0, 1], got {}", self.momentum_refresh),
            ));
        }
        Ok(())
    }
}

/// Metropolis acceptance probability `min(1, exp(-β ΔH))`.
pub fn acceptance_probability(beta: f64, delta_h: f64) -> f64 {
    if delta_h.is_nan() {
        return 0.0;
    }
    (-beta * delta_h).exp().min(1.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct HmcChain {
    pub n: usize,
    pub dim: usize,
    /// Positions after each recorded iteration, row-major.
    pub positions: Vec<Vec<f64>>,
    /// `|p|²` at the start of each recorded iteration (after refresh).
    pub kinetic_sq: Vec<f64>,
    /// `H` of the current state after each recorded iteration.
    pub energy: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Energy error of each recorded proposal (`+∞` for collisions).
    pub delta_h: Vec<f64>,
    /// Proposals rejected because a leapfrog step hit a collision.
    pub collision_rejections: usize,
    pub final_state: ParticleState,
}

impl HmcChain {
    pub fn acceptance_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len() as f64
    }

    /// Mean of `min(1, exp(-βΔH))` over the recorded proposals.
    pub fn mean_acceptance_probability(&self, beta: f64) -> f64 {
        if self.delta_h.is_empty() {
            return 0.0;
        }
        self.delta_h
            .iter()
            .map(|&dh| acceptance_probability(beta, dh))
            .sum::<f64>()
            / self.delta_h.len() as f64
    }
}

/// Runs `burn_in + n_samples` HMC iterations from `initial_q` with
/// momenta drawn from the Gibbs marginal. Only post-burn-in iterations
/// are recorded.
pub fn hmc_chain(params: &SystemParams, cfg: &HmcConfig, initial_q: &[f64]) -> Result<HmcChain> {
    cfg.validate()?;
    let (n, d) = (params.n, params.dim);
    if initial_q.len() != n * d {
        return Err(Error::DimensionMismatch {
            expected: n * d,
            found: initial_q.len(),
        });
    }
    if !params.in_domain(initial_q) {
        return Err(Error::InvalidConfig(
            "initial positions are outside the state space".into(),
        ));
    }
    let mut rng = StreamRng::new(cfg.seed, 0);
    let sd = 1.0 / params.beta.sqrt();
    let r = cfg.momentum_refresh;
    let keep = (1.0 - r * r).max(0.0).sqrt();

    let mut q = initial_q.to_vec();
    let mut p = vec![0.0; n * d];
    rng.fill_normal(&mut p);
    p.iter_mut().for_each(|x| *x *= sd);
    let mut grad = vec![0.0; n * d];
    params.grad_u_into(&q, &mut grad)?;
    let mut u = params.potential_energy_q(&q)?;

    let mut chain = HmcChain {
        n,
        dim: d,
        positions: Vec::with_capacity(cfg.n_samples),
        kinetic_sq: Vec::with_capacity(cfg.n_samples),
        energy: Vec::with_capacity(cfg.n_samples),
        accepted: Vec::with_capacity(cfg.n_samples),
        delta_h: Vec::with_capacity(cfg.n_samples),
        collision_rejections: 0,
        final_state: ParticleState::at_rest(n, d, q.clone())?,
    };
    let mut xi = vec![0.0; n * d];
    let (mut q1, mut p1, mut g1) = (q.clone(), p.clone(), grad.clone());

    for it in 0..cfg.burn_in + cfg.n_samples {
        rng.fill_normal(&mut xi);
        for k in 0..n * d {
            p[k] = keep * p[k] + r * sd * xi[k];
        }
        let k0: f64 = p.iter().map(|x| x * x).sum();
        let h0 = 0.5 * k0 + u;

        q1.copy_from_slice(&q);
        p1.copy_from_slice(&p);
        g1.copy_from_slice(&grad);
        let mut collided = false;
        for _ in 0..cfg.leapfrog_steps {
            let dt = cfg.leapfrog_dt;
            for k in 0..n * d {
                p1[k] -= 0.5 * dt * g1[k];
                q1[k] += dt * p1[k];
            }
            if !params.in_domain(&q1) || params.grad_u_into(&q1, &mut g1).is_err() {
                collided = true;
                break;
            }
            for k in 0..n * d {
                p1[k] -= 0.5 * dt * g1[k];
            }
        }
        let u1 = if collided {
            None
        } else {
            params.potential_energy_q(&q1).ok()
        };
        let delta_h = match u1 {
            Some(u1) => 0.5 * p1.iter().map(|x| x * x).sum::<f64>() + u1 - h0,
            None => f64::INFINITY,
        };
        if u1.is_none() {
            chain.collision_rejections += 1;
        }
        let accept = u1.is_some() && rng.uniform() < acceptance_probability(params.beta, delta_h);
        if accept {
            q.copy_from_slice(&q1);
            p.copy_from_slice(&p1);
            grad.copy_from_slice(&g1);
            u = u1.unwrap_or(u);
        } else {
            p.iter_mut().for_each(|x| *x = -*x);
        }
        if it >= cfg.burn_in {
            chain.positions.push(q.clone());
            chain.kinetic_sq.push(k0);
            chain
                .energy
                .push(0.5 * p.iter().map(|x| x * x).sum::<f64>() + u);
            chain.accepted.push(accept);
            chain.delta_h.push(delta_h);
        }
    }
    chain.final_state = ParticleState::new(n, d, q, p)?;
    Ok(chain)
}

/// The random-matrix regime: `d = 2`, quadratic confinement `ω = 1/2` and
/// `β = N β̃` with the log kernel. With this choice the equilibrium
/// positions fill the unit disk as `N → ∞` when `β̃ = 2`.
pub fn ginibre_preset(n: usize, beta_tilde: f64) -> Result<SystemParams> {
    SystemParams::new(
        n,
        2,
        1.0,
        n as f64 * beta_tilde,
        InteractionKernel::coulomb(2)?,
        ConfiningPotential::quadratic(0.5),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverdampedConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub eta: f64,
    pub max_halvings: u32,
    /// Record positions every this many steps.
    pub record_every: usize,
}

impl Default for OverdampedConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            n_steps: 1000,
            seed: 0,
            eta: 0.25,
            max_halvings: 30,
            record_every: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OverdampedChain {
    pub times: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
    pub halving_steps: usize,
}

/// Euler–Maruyama for the overdamped dynamics. Rejected steps are refined
/// by halving with Brownian-bridge noise, as in the kinetic integrators.
pub fn overdamped_chain(
    params: &SystemParams,
    cfg: &OverdampedConfig,
    initial_q: &[f64],
) -> Result<OverdampedChain> {
    if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "overdamped step must be positive, got {}",
            cfg.dt
        )));
    }
    if !(cfg.eta > 0.0 && cfg.eta <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "eta must lie in (0, 1], got {}",
            cfg.eta
        )));
    }
    let nd = params.n * params.dim;
    if initial_q.len() != nd {
        return Err(Error::DimensionMismatch {
            expected: nd,
            found: initial_q.len(),
        });
    }
    if !params.in_domain(initial_q) {
        return Err(Error::InvalidConfig(
            "initial positions are outside the state space".into(),
        ));
    }
    let every = cfg.record_every.max(1);
    let mut rng = StreamRng::new(cfg.seed, 0);
    let mut walker = Walker {
        params,
        eta: cfg.eta,
        max_halvings: cfg.max_halvings,
        q: initial_q.to_vec(),
        grad: vec![0.0; nd],
    };
    params.grad_u_into(&walker.q, &mut walker.grad)?;
    let mut chain = OverdampedChain {
        times: vec![0.0],
        positions: vec![walker.q.clone()],
        halving_steps: 0,
    };
    let mut xi = vec![0.0; nd];
    for k in 1..=cfg.n_steps {
        rng.fill_normal(&mut xi);
        let mut halved = false;
        walker
            .advance(cfg.dt, &xi, 0, &mut rng, &mut halved)
            .map_err(|e| match e {
                Error::StepFailure { halvings, .. } => Error::StepFailure {
                    time: k as f64 * cfg.dt,
                    halvings,
                },
                e => e,
            })?;
        if halved {
            chain.halving_steps += 1;
        }
        if k % every == 0 {
            chain.times.push(k as f64 * cfg.dt);
            chain.positions.push(walker.q.clone());
        }
    }
    Ok(chain)
}

struct Walker<'a> {
    params: &'a SystemParams,
    eta: f64,
    max_halvings: u32,
    q: Vec<f64>,
    grad: Vec<f64>,
}

impl Walker<'_> {
    fn advance(
        &mut self,
        h: f64,
        xi: &[f64],
        depth: u32,
        rng: &mut StreamRng,
        halved: &mut bool,
    ) -> Result<()> {
        let noise = (2.0 * h / self.params.beta).sqrt();
        let q: Vec<f64> = (0..self.q.len())
            .map(|k| self.q[k] - h * self.grad[k] + noise * xi[k])
            .collect();
        if guard_accepts(self.params, &self.q, &q, self.eta) {
            let mut grad = vec![0.0; q.len()];
            if self.params.grad_u_into(&q, &mut grad).is_ok() {
                self.q = q;
                self.grad = grad;
                return Ok(());
            }
        }
        if depth >= self.max_halvings {
            return Err(Error::StepFailure {
                time: 0.0,
                halvings: depth,
            });
        }
        *halved = true;
        let w = (0.5 * h).sqrt();
        let (xi1, xi2) = bridge(xi, w, w, rng);
        self.advance(0.5 * h, &xi1, depth + 1, rng, halved)?;
        self.advance(0.5 * h, &xi2, depth + 1, rng, halved)
    }
}
