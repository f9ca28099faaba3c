//! The collision-dissipation functional
//!
//! ```text
//! J(q) = Σ_i (Σ_{j≠i} (q_i - q_j)/|q_i - q_j|^m) · (Σ_{k≠i} (q_i - q_k)/|q_i - q_k|)
//! ```
//!
//! and its lower bound `J(q) >= Σ_{i≠j} |q_i - q_j|^{-(m-1)}`. The bound
//! holds for every configuration because the cross terms regroup into
//! triangle sums `Σ cos θ_m (...)` that are non-negative. `m = d` for the
//! Coulomb kernel and `m = s + 2` for Riesz.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::system::ParticleState;

/// Relative slack tolerance for floating-point round-off.
pub const LEMMA_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckResult {
    pub j: f64,
    pub rhs: f64,
    pub slack: f64,
    pub passed: bool,
}

impl CheckResult {
    pub fn relative_slack(&self) -> f64 {
        self.slack / self.rhs
    }
}

pub fn j_functional(state: &ParticleState, exponent: f64) -> Result<f64> {
    Ok(terms(state, exponent)?.0)
}

/// Computes `J` and the pair sum and checks `J - rhs >= -LEMMA_REL_TOL · rhs`.
pub fn lemma_check(state: &ParticleState, exponent: f64) -> Result<CheckResult> {
    let (j, rhs) = terms(state, exponent)?;
    let slack = j - rhs;
    Ok(CheckResult {
        j,
        rhs,
        slack,
        passed: slack >= -LEMMA_REL_TOL * rhs,
    })
}

fn terms(state: &ParticleState, m: f64) -> Result<(f64, f64)> {
    let (n, d) = (state.n(), state.dim());
    if n < 2 {
        return Err(Error::InvalidConfig("need at least two particles".into()));
    }
    let mut singular = vec![0.0; n * d];
    let mut units = vec![0.0; n * d];
    let mut rhs = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let mut r2 = 0.0;
            for k in 0..d {
                let x = state.q[i * d + k] - state.q[j * d + k];
                r2 += x * x;
            }
            if r2 == 0.0 {
                return Err(Error::ZeroSeparation);
            }
            let r = r2.sqrt();
            let inv_m = r.powf(-m);
            let inv_1 = 1.0 / r;
            for k in 0..d {
                let x = state.q[i * d + k] - state.q[j * d + k];
                singular[i * d + k] += x * inv_m;
                singular[j * d + k] -= x * inv_m;
                units[i * d + k] += x * inv_1;
                units[j * d + k] -= x * inv_1;
            }
            rhs += 2.0 * r.powf(1.0 - m);
        }
    }
    let j = singular.iter().zip(&units).map(|(a, b)| a * b).sum();
    Ok((j, rhs))
}
