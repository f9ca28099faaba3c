//! Sample-based constants for the drift inequality
//!
//! ```text
//! LW/W <= -α(|q|² + |p|²) - (b/2N²) Σ_{i≠j} |q_i - q_j|^{-e} + C
//! ```
//!
//! and for the generator form `LW <= -λW + C_W`.
//!
//! `α` comes from the far field: along a ray `t·x`, `LW/W` is dominated by
//! a quadratic form, so `-LW/W(t x) / (t² S1(x))` at large `t` estimates the
//! available dissipation in direction `x`. Half the smallest slope is used,
//! the other half leaves room for the lower-order terms. `C` is the largest
//! value of `LW/W + α S1 + (b/2N²) S2` over the samples, refined by local
//! gradient ascent from the worst samples.

use rayon::prelude::*;
use serde::Serialize;

use super::{log_w, lw_over_w, singular_pair_sum, LyapunovParams, StateSampler};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::system::{ParticleState, SystemParams};

const RAY_SCALE: f64 = 1e3;
const REFINE_STARTS: usize = 8;
const REFINE_ITERS: usize = 400;
const C_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftBoundFit {
    pub alpha: f64,
    pub c: f64,
    pub lambda: f64,
    /// `log R`: above this level every sample has `LW/W <= -λ`.
    pub log_level: f64,
    /// `log C_W` for the generator form `LW <= -λW + C_W`.
    pub log_c_w: f64,
}

impl DriftBoundFit {
    /// `log(e^{-λt} W0 + C_W/λ)`.
    pub fn log_supermartingale_bound(&self, log_w0: f64, t: f64) -> f64 {
        log_add_exp(log_w0 - self.lambda * t, self.log_c_w - self.lambda.ln())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitDiagnostics {
    pub n_samples: usize,
    /// Smallest far-field slope over the sampled rays.
    pub min_ray_slope: f64,
    /// `C` before refinement (maximum over the samples).
    pub c_sampled: f64,
    /// State attaining the refined `C`.
    pub c_witness: ParticleState,
    /// Sample attaining `λ`.
    pub lambda_witness: ParticleState,
    pub max_lw_over_w: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftFit {
    pub bound: DriftBoundFit,
    pub diagnostics: FitDiagnostics,
}

struct Evaluated {
    lw: f64,
    log_w: f64,
    gap: f64,
    slope: f64,
}

fn s1(state: &ParticleState) -> f64 {
    state.q.iter().chain(&state.p).map(|x| x * x).sum()
}

fn gap(
    params: &SystemParams,
    lp: &LyapunovParams,
    alpha: f64,
    state: &ParticleState,
) -> Result<f64> {
    let n = params.n as f64;
    let lw = lw_over_w(params, lp, state)?;
    Ok(lw + alpha * s1(state) + lp.b / (2.0 * n * n) * singular_pair_sum(params, state)?)
}

fn ray_slope(params: &SystemParams, lp: &LyapunovParams, state: &ParticleState) -> Result<f64> {
    let norm = s1(state);
    if norm == 0.0 {
        return Ok(f64::INFINITY);
    }
    let scaled = ParticleState::new(
        state.n(),
        state.dim(),
        state.q.iter().map(|x| x * RAY_SCALE).collect(),
        state.p.iter().map(|x| x * RAY_SCALE).collect(),
    )?;
    Ok(-lw_over_w(params, lp, &scaled)? / (RAY_SCALE * RAY_SCALE * norm))
}

/// Fits `(α, C, λ, R, C_W)` on a training sample.
pub fn fit_drift_constants(
    params: &SystemParams,
    lp: &LyapunovParams,
    samples: &[ParticleState],
) -> Result<DriftFit> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let n = params.n as f64;
    let evals: Vec<Evaluated> = samples
        .par_iter()
        .map(|s| {
            Ok(Evaluated {
                lw: lw_over_w(params, lp, s)?,
                log_w: log_w(params, lp, s)?,
                gap: lp.b / (2.0 * n * n) * singular_pair_sum(params, s)?,
                slope: ray_slope(params, lp, s)?,
            })
        })
        .collect::<Result<_>>()?;

    let min_slope = evals.iter().map(|e| e.slope).fold(f64::INFINITY, f64::min);
    if !(min_slope > 0.0) || !min_slope.is_finite() {
        return Err(Error::InfeasibleFit(format!(
            "far-field slope {min_slope:e} is not positive; no α > 0 fits the samples"
        )));
    }
    let alpha = 0.5 * min_slope;

    let mut order: Vec<(f64, usize)> = evals
        .iter()
        .zip(samples)
        .enumerate()
        .map(|(i, (e, s))| (e.lw + e.gap + alpha * s1(s), i))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    let c_sampled = order[0].0;

    let (mut c, mut witness) = (c_sampled, samples[order[0].1].clone());
    for &(_, i) in order.iter().take(REFINE_STARTS) {
        let (value, state) = ascend(params, lp, alpha, &samples[i])?;
        if value > c {
            c = value;
            witness = state;
        }
    }
    c += C_MARGIN * c.abs().max(1.0);

    let positive = evals.iter().filter(|e| e.lw >= 0.0).map(|e| e.log_w);
    let log_level = positive.fold(f64::NEG_INFINITY, f64::max);
    let log_level = if log_level.is_finite() {
        log_level
    } else {
        evals.iter().map(|e| e.log_w).fold(f64::INFINITY, f64::min) - 1.0
    };
    let (lambda, lambda_idx) = evals
        .iter()
        .enumerate()
        .filter(|(_, e)| e.log_w > log_level)
        .map(|(i, e)| (-e.lw, i))
        .fold((f64::INFINITY, usize::MAX), |acc, x| {
            if x.0 < acc.0 {
                x
            } else {
                acc
            }
        });
    if lambda_idx == usize::MAX || !(lambda > 0.0) {
        return Err(Error::InfeasibleFit(
            "no sample above the level set has a negative drift".into(),
        ));
    }
    // On {W <= R}: LW = (LW/W) W <= (C + λ) R - λ W, since LW/W <= C.
    let log_c_w = log_level + (c.max(0.0) + lambda).ln();

    Ok(DriftFit {
        bound: DriftBoundFit {
            alpha,
            c,
            lambda,
            log_level,
            log_c_w,
        },
        diagnostics: FitDiagnostics {
            n_samples: samples.len(),
            min_ray_slope: min_slope,
            c_sampled,
            c_witness: witness,
            lambda_witness: samples[lambda_idx].clone(),
            max_lw_over_w: evals.iter().map(|e| e.lw).fold(f64::NEG_INFINITY, f64::max),
        },
    })
}

/// Finite-difference gradient ascent on the drift gap with step doubling
/// and halving. States leaving the domain count as `-∞`.
fn ascend(
    params: &SystemParams,
    lp: &LyapunovParams,
    alpha: f64,
    start: &ParticleState,
) -> Result<(f64, ParticleState)> {
    let (n, d) = (start.n(), start.dim());
    let m = n * d;
    let eval = |x: &[f64]| -> f64 {
        if !params.in_domain(&x[..m]) {
            return f64::NEG_INFINITY;
        }
        ParticleState::new(n, d, x[..m].to_vec(), x[m..].to_vec())
            .and_then(|s| gap(params, lp, alpha, &s))
            .unwrap_or(f64::NEG_INFINITY)
    };
    let mut x: Vec<f64> = start.q.iter().chain(&start.p).copied().collect();
    let mut fx = eval(&x);
    let mut grad = vec![0.0; 2 * m];
    let mut step = 1e-3;
    for _ in 0..REFINE_ITERS {
        for k in 0..2 * m {
            let h = 1e-6 * x[k].abs().max(1.0);
            let orig = x[k];
            x[k] = orig + h;
            let up = eval(&x);
            x[k] = orig - h;
            let down = eval(&x);
            x[k] = orig;
            grad[k] = if up.is_finite() && down.is_finite() {
                (up - down) / (2.0 * h)
            } else {
                0.0
            };
        }
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm == 0.0 || !gnorm.is_finite() {
            break;
        }
        let mut improved = false;
        while step * gnorm > 1e-12 {
            let trial: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a + step * g).collect();
            let ft = eval(&trial);
            if ft > fx {
                x = trial;
                fx = ft;
                step *= 2.0;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let state = ParticleState::new(n, d, x[..m].to_vec(), x[m..].to_vec())?;
    Ok((fx, state))
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftCheck {
    pub n_tested: usize,
    pub violations: usize,
    /// Largest `LW/W - rhs` seen; negative when the bound holds everywhere.
    pub worst_margin: f64,
    pub worst_state: Option<ParticleState>,
}

impl DriftCheck {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Evaluates the fitted drift bound on a (held-out) sample.
pub fn check_drift_bound(
    params: &SystemParams,
    lp: &LyapunovParams,
    fit: &DriftBoundFit,
    samples: &[ParticleState],
) -> Result<DriftCheck> {
    let margins: Vec<f64> = samples
        .par_iter()
        .map(|s| Ok(gap(params, lp, fit.alpha, s)? - fit.c))
        .collect::<Result<_>>()?;
    let (worst, idx) =
        margins
            .iter()
            .enumerate()
            .fold((f64::NEG_INFINITY, None), |acc, (i, &m)| {
                if m > acc.0 {
                    (m, Some(i))
                } else {
                    acc
                }
            });
    Ok(DriftCheck {
        n_tested: samples.len(),
        violations: margins.iter().filter(|&&m| m > 0.0).count(),
        worst_margin: worst,
        worst_state: idx.map(|i| samples[i].clone()),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AlphaScaling {
    pub ns: Vec<usize>,
    pub alphas: Vec<f64>,
    pub cs: Vec<f64>,
    /// Least-squares slope of `log α` against `log N`.
    pub log_log_slope: f64,
}

/// Fits `α` across particle numbers. Reported as an experiment; the
/// slope depends on the sampler as much as on the dynamics.
pub fn alpha_scaling(
    make_params: impl Fn(usize) -> Result<SystemParams>,
    lp: &LyapunovParams,
    ns: &[usize],
    n_samples: usize,
    seed: u64,
) -> Result<AlphaScaling> {
    let mut alphas = Vec::with_capacity(ns.len());
    let mut cs = Vec::with_capacity(ns.len());
    for &n in ns {
        let params = make_params(n)?;
        let mut rng = StreamRng::new(seed, n as u64);
        let samples = StateSampler::new(n, params.dim).sample_many(n_samples, &mut rng);
        let fit = fit_drift_constants(&params, lp, &samples)?;
        alphas.push(fit.bound.alpha);
        cs.push(fit.bound.c);
    }
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = alphas.iter().map(|a| a.ln()).collect();
    Ok(AlphaScaling {
        ns: ns.to_vec(),
        alphas,
        cs,
        log_log_slope: least_squares_slope(&xs, &ys),
    })
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return f64::NAN;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}
