//! The exponential Lyapunov function `W = exp(aH + Ψ)` for the Coulomb
//! Langevin system.
//!
//! The corrector
//!
//! ```text
//! Ψ(q, p) = -(b/N) Σ_{i≠j} (p_i - p_j)·(q_i - q_j)/|q_i - q_j| + c p·q
//! ```
//!
//! adds dissipation in the position directions (through `c p·q`) and near
//! collisions (through the unit-vector sum). Everything here works with
//! `log W`; `W` itself overflows easily near the singularity.
//!
//! [`lw_over_w`] evaluates `LW/W` in closed form from the partial
//! derivatives of `H` and `Ψ`, where `L` is the generator
//!
//! ```text
//! L f = p·∇_q f - γ p·∇_p f - ∇U·∇_p f + (γ/β) Δ_p f.
//! ```

mod fit;
pub(crate) use fit::log_add_exp;
mod lemma;
mod sampler;

pub use fit::{
    alpha_scaling, check_drift_bound, fit_drift_constants, AlphaScaling, DriftBoundFit, DriftCheck,
    DriftFit, FitDiagnostics,
};
pub use lemma::{j_functional, lemma_check, CheckResult, LEMMA_REL_TOL};
pub use sampler::StateSampler;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelFamily;
use crate::potentials::AssumptionConstants;
use crate::system::{ParticleState, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub eps1: f64,
    pub eps2: f64,
}

impl Default for LyapunovParams {
    fn default() -> Self {
        Self {
            a: 0.5,
            b: 0.1,
            c: 0.1,
            eps1: 0.05,
            eps2: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub expression: &'static str,
    /// Positive when the condition holds.
    pub slack: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationResult {
    pub conditions: Vec<ConditionCheck>,
}

impl ValidationResult {
    pub fn passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn condition(&self, name: &str) -> Option<&ConditionCheck> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

/// Evaluates the admissibility conditions on `(a, b, c, ε1, ε2)`.
pub fn validate_params(
    params: &SystemParams,
    lp: &LyapunovParams,
    ac: &AssumptionConstants,
) -> ValidationResult {
    let (g, beta) = (params.gamma, params.beta);
    let LyapunovParams {
        a,
        b,
        c,
        eps1,
        eps2,
    } = *lp;
    let mk = |name, expression, slack: f64| ConditionCheck {
        name,
        expression,
        slack,
        passed: slack > 0.0,
    };
    let skew = (2.0 * a / beta - 1.0).abs();
    ValidationResult {
        conditions: vec![
            mk("a_range", "0 < a < beta", a.min(beta - a)),
            mk(
                "positivity",
                "b, c, eps1, eps2 > 0",
                b.min(c).min(eps1).min(eps2),
            ),
            mk(
                "momentum_dissipation",
                "c + eps1 + eps2 - gamma a (1 - a/beta) < 0",
                g * a * (1.0 - a / beta) - (c + eps1 + eps2),
            ),
            mk(
                "position_dissipation",
                "gamma^2 c^2 |2a/beta - 1|^2 / (4 eps1) - c (c1 c2 / 2 - 2c) < 0",
                c * (ac.c1 * ac.c2 / 2.0 - 2.0 * c) - g * g * c * c * skew * skew / (4.0 * eps1),
            ),
        ],
    }
}

/// Pairwise geometry shared by the Lyapunov quantities. Iterates unordered
/// pairs `i < j` with `r = |q_i - q_j|` and unit vector `u = (q_i - q_j)/r`.
fn for_each_pair(
    state: &ParticleState,
    mut f: impl FnMut(usize, usize, f64, &[f64]),
) -> Result<()> {
    let (n, d) = (state.n(), state.dim());
    let mut u = vec![0.0; d];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut r2 = 0.0;
            for k in 0..d {
                u[k] = state.q[i * d + k] - state.q[j * d + k];
                r2 += u[k] * u[k];
            }
            if r2 == 0.0 {
                return Err(Error::ZeroSeparation);
            }
            let r = r2.sqrt();
            for x in u.iter_mut() {
                *x /= r;
            }
            f(i, j, r, &u);
        }
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The corrector `Ψ`.
pub fn psi(params: &SystemParams, lp: &LyapunovParams, state: &ParticleState) -> Result<f64> {
    let d = state.dim();
    let mut pair = 0.0;
    for_each_pair(state, |i, j, _, u| {
        for k in 0..d {
            pair += (state.p[i * d + k] - state.p[j * d + k]) * u[k];
        }
    })?;
    // the ordered sum counts each pair twice
    Ok(-(lp.b / params.n as f64) * 2.0 * pair + lp.c * dot(&state.p, &state.q))
}

/// `log W = aH + Ψ`.
pub fn log_w(params: &SystemParams, lp: &LyapunovParams, state: &ParticleState) -> Result<f64> {
    Ok(lp.a * params.total_energy(state)? + psi(params, lp, state)?)
}

/// `W = exp(aH + Ψ)`; may be `+∞` where `log W` exceeds the f64 range.
pub fn lyapunov_w(
    params: &SystemParams,
    lp: &LyapunovParams,
    state: &ParticleState,
) -> Result<f64> {
    Ok(log_w(params, lp, state)?.exp())
}

/// `∇_p Ψ`, row-major: `-(2b/N) Σ_{j≠i} u_ij + c q_i`. The factor 2 comes
/// from the ordered pair sum in `Ψ`, where each pair appears twice.
pub fn grad_p_psi(
    params: &SystemParams,
    lp: &LyapunovParams,
    state: &ParticleState,
) -> Result<Vec<f64>> {
    let d = state.dim();
    let mut units = vec![0.0; state.q.len()];
    for_each_pair(state, |i, j, _, u| {
        for k in 0..d {
            units[i * d + k] += u[k];
            units[j * d + k] -= u[k];
        }
    })?;
    let s = 2.0 * lp.b / params.n as f64;
    Ok(units
        .iter()
        .zip(&state.q)
        .map(|(u, q)| -s * u + lp.c * q)
        .collect())
}

/// `∇_q Ψ`, row-major.
pub fn grad_q_psi(
    params: &SystemParams,
    lp: &LyapunovParams,
    state: &ParticleState,
) -> Result<Vec<f64>> {
    let d = state.dim();
    let mut out: Vec<f64> = state.p.iter().map(|p| lp.c * p).collect();
    let s = 2.0 * lp.b / params.n as f64;
    let mut dp = vec![0.0; d];
    for_each_pair(state, |i, j, r, u| {
        for k in 0..d {
            dp[k] = state.p[i * d + k] - state.p[j * d + k];
        }
        let dpu = dot(&dp, u);
        for k in 0..d {
            let t = s * (dp[k] - dpu * u[k]) / r;
            out[i * d + k] -= t;
            out[j * d + k] += t;
        }
    })?;
    Ok(out)
}

/// `LW/W` in closed form:
///
/// ```text
/// p·∇_qΨ - γ p·(a p + ∇_pΨ) - ∇U·∇_pΨ + (γ/β)|a p + ∇_pΨ|² + N d a γ/β
/// ```
///
/// Exact when the force is the gradient of the energy in `H`, which holds
/// in both kernel normalizations.
pub fn lw_over_w(params: &SystemParams, lp: &LyapunovParams, state: &ParticleState) -> Result<f64> {
    let (n, d) = (state.n(), state.dim());
    let grad_u = params.grad_u(state)?;
    let s = 2.0 * lp.b / n as f64;

    let mut units = vec![0.0; n * d];
    let mut coupling = 0.0;
    let mut dp = vec![0.0; d];
    for_each_pair(state, |i, j, r, u| {
        let mut dp2 = 0.0;
        for k in 0..d {
            units[i * d + k] += u[k];
            units[j * d + k] -= u[k];
            dp[k] = state.p[i * d + k] - state.p[j * d + k];
            dp2 += dp[k] * dp[k];
        }
        let dpu = dot(&dp, u);
        coupling += (dp2 - dpu * dpu) / r;
    })?;

    let (g, inv_beta, a) = (params.gamma, 1.0 / params.beta, lp.a);
    let mut total = -s * coupling + lp.c * dot(&state.p, &state.p);
    for idx in 0..n * d {
        let gp = -s * units[idx] + lp.c * state.q[idx];
        let p = state.p[idx];
        let v = a * p + gp;
        total += -g * p * v - grad_u[idx] * gp + g * inv_beta * v * v;
    }
    Ok(total + (n * d) as f64 * a * g * inv_beta)
}

/// `Σ_{i≠j} |q_i - q_j|^{-e}` over ordered pairs with `e` the kernel's
/// singularity exponent.
pub fn singular_pair_sum(params: &SystemParams, state: &ParticleState) -> Result<f64> {
    let e = params.kernel.singularity_exponent();
    let mut acc = 0.0;
    for_each_pair(state, |_, _, r, _| acc += r.powf(-e))?;
    Ok(2.0 * acc)
}

/// Right-hand side of the drift bound
/// `-α(|q|² + |p|²) - (b/2N²) Σ_{i≠j}|q_i - q_j|^{-e} + C`.
pub fn drift_bound_rhs(
    params: &SystemParams,
    lp: &LyapunovParams,
    fit: &DriftBoundFit,
    state: &ParticleState,
) -> Result<f64> {
    let n = params.n as f64;
    let s1 = dot(&state.q, &state.q) + dot(&state.p, &state.p);
    let s2 = singular_pair_sum(params, state)?;
    Ok(-fit.alpha * s1 - lp.b / (2.0 * n * n) * s2 + fit.c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoercivityRadii {
    /// `H >= R` whenever `|p| >= r_momentum`.
    pub r_momentum: f64,
    /// `H >= R` whenever `|q| >= r_position`.
    pub r_position: f64,
    /// `H >= R` whenever some pair is closer than `r_collision`.
    pub r_collision: f64,
}

/// Radii outside of which the energy exceeds `level`.
///
/// Power-law kernels: `(√(2R), √((M+R)/c1), (1/(2NR))^{1/ν})` with `ν = d-2`
/// (Coulomb) or `ν = s` (Riesz). Logarithmic kernels use the `log x <= x`
/// argument: with `K = R + M + N/(2c1)`, `(√(2K), √(2K/c1), exp(-N(R + √N R2)))`.
pub fn coercivity_radii(
    params: &SystemParams,
    level: f64,
    ac: &AssumptionConstants,
) -> CoercivityRadii {
    let n = params.n as f64;
    if params.kernel.is_logarithmic() {
        let k = level + ac.m + n / (2.0 * ac.c1);
        let r2 = (2.0 * k / ac.c1).sqrt();
        CoercivityRadii {
            r_momentum: (2.0 * k).sqrt(),
            r_position: r2,
            r_collision: (-n * (level + n.sqrt() * r2)).exp(),
        }
    } else {
        let nu = match params.kernel.family() {
            KernelFamily::Riesz { s } => s,
            _ => params.dim as f64 - 2.0,
        };
        CoercivityRadii {
            r_momentum: (2.0 * level).sqrt(),
            r_position: ((ac.m + level) / ac.c1).sqrt(),
            r_collision: (1.0 / (2.0 * n * level)).powf(1.0 / nu),
        }
    }
}
