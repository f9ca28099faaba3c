//! Time integration of the kinetic Langevin SDE
//!
//! ```text
//! dq = p dt,   dp = -γ p dt - ∇U(q) dt + √(2γ/β) dB
//! ```
//!
//! with a distance-proportional step guard near collisions.
//!
//! A step of size `h` is rejected when any particle would move by more
//! than `eta` times the current minimum pair distance, when the minimum
//! distance would shrink below `(1 - eta)` of its current value, or when
//! the 1D ordering would break. A rejected step is replaced by two half
//! steps whose noise is drawn from the Gaussian bridge of the rejected
//! noise, so the refined path is a refinement of the same realization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::{log_w, DriftBoundFit, LyapunovParams};
use crate::rng::StreamRng;
use crate::system::{min_pair_distance, ParticleState, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
    #[default]
    Baoab,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub dt: f64,
    /// Largest allowed move per sub-step as a fraction of the minimum
    /// pair distance.
    pub eta: f64,
    /// Trajectories stop once `log W` exceeds this level.
    pub w_cap_log: Option<f64>,
    pub seed: u64,
    pub max_halvings: u32,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Baoab,
            dt: 1e-2,
            eta: 0.25,
            w_cap_log: None,
            seed: 0,
            max_halvings: 30,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid = |field: &str, message: String| Error::Validation {
            field: format!("integrator.{field}"),
            message,
        };
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(invalid(
                "eta",
                format!("must lie in (0, 1], got {}", self.eta),
            ));
        }
        if self.w_cap_log.is_some_and(f64::is_nan) {
            return Err(invalid("w_cap_log", "must not be NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StepReport {
    /// Deepest halving level reached (0 when the full step was accepted).
    pub halvings: u32,
    pub substeps: u32,
    pub rejections: u32,
}

/// One integrator bound to a system, carrying the force at the current
/// positions between steps.
struct Stepper<'a> {
    params: &'a SystemParams,
    cfg: &'a IntegratorConfig,
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(
        params: &'a SystemParams,
        cfg: &'a IntegratorConfig,
        state: &ParticleState,
    ) -> Result<Self> {
        if state.n() != params.n || state.dim() != params.dim {
            return Err(Error::DimensionMismatch {
                expected: params.n * params.dim,
                found: state.q.len(),
            });
        }
        if !params.in_domain(&state.q) {
            return Err(Error::InvalidConfig(
                "initial positions are outside the state space".into(),
            ));
        }
        let mut grad = vec![0.0; state.q.len()];
        params.grad_u_into(&state.q, &mut grad)?;
        Ok(Self {
            params,
            cfg,
            q: state.q.clone(),
            p: state.p.clone(),
            scratch: vec![0.0; grad.len()],
            grad,
        })
    }

    fn state(&self) -> ParticleState {
        ParticleState::new(
            self.params.n,
            self.params.dim,
            self.q.clone(),
            self.p.clone(),
        )
        .expect("stepper keeps states finite")
    }

    /// Noise weights `(w1, w2)` of the two halves of a step of size `h`.
    /// The full-step noise is `w1 ξ1 + w2 ξ2` with `w1² + w2²` equal to the
    /// full-step variance.
    fn half_weights(&self, h: f64) -> (f64, f64) {
        match self.cfg.scheme {
            Scheme::EulerMaruyama => ((0.5 * h).sqrt(), (0.5 * h).sqrt()),
            Scheme::Baoab => {
                let s = ou_sigma(self.params.gamma, self.params.beta, 0.5 * h);
                ((-0.5 * self.params.gamma * h).exp() * s, s)
            }
        }
    }

    fn step(&mut self, rng: &mut StreamRng) -> Result<StepReport> {
        let mut xi = vec![0.0; self.q.len()];
        rng.fill_normal(&mut xi);
        let mut report = StepReport::default();
        self.advance(self.cfg.dt, &xi, 0, rng, &mut report)?;
        Ok(report)
    }

    fn advance(
        &mut self,
        h: f64,
        xi: &[f64],
        depth: u32,
        rng: &mut StreamRng,
        report: &mut StepReport,
    ) -> Result<()> {
        if let Some((q, p, grad)) = self.attempt(h, xi) {
            self.q = q;
            self.p = p;
            self.grad = grad;
            report.substeps += 1;
            return Ok(());
        }
        if depth >= self.cfg.max_halvings {
            return Err(Error::StepFailure {
                time: 0.0,
                halvings: depth,
            });
        }
        report.rejections += 1;
        report.halvings = report.halvings.max(depth + 1);
        let (w1, w2) = self.half_weights(h);
        let (xi1, xi2) = bridge(xi, w1, w2, rng);
        self.advance(0.5 * h, &xi1, depth + 1, rng, report)?;
        self.advance(0.5 * h, &xi2, depth + 1, rng, report)
    }

    /// Proposes one sub-step; `None` when the guard rejects it.
    fn attempt(&mut self, h: f64, xi: &[f64]) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let (g, beta) = (self.params.gamma, self.params.beta);
        let (q0, p0, f0) = (&self.q, &self.p, &self.grad);
        let (q, p) = match self.cfg.scheme {
            Scheme::EulerMaruyama => {
                let noise = (2.0 * g * h / beta).sqrt();
                let q: Vec<f64> = q0.iter().zip(p0).map(|(q, p)| q + h * p).collect();
                let p: Vec<f64> = (0..q0.len())
                    .map(|k| p0[k] - h * (g * p0[k] + f0[k]) + noise * xi[k])
                    .collect();
                (q, p)
            }
            Scheme::Baoab => {
                let decay = (-g * h).exp();
                let sigma = ou_sigma(g, beta, h);
                let mut q = Vec::with_capacity(q0.len());
                let mut p = Vec::with_capacity(q0.len());
                for k in 0..q0.len() {
                    let ph = p0[k] - 0.5 * h * f0[k];
                    let po = decay * ph + sigma * xi[k];
                    q.push(q0[k] + 0.5 * h * (ph + po));
                    p.push(po);
                }
                (q, p)
            }
        };
        if !self.guard(&q) {
            return None;
        }
        self.params.grad_u_into(&q, &mut self.scratch).ok()?;
        let grad = self.scratch.clone();
        let p = match self.cfg.scheme {
            Scheme::EulerMaruyama => p,
            Scheme::Baoab => p.iter().zip(&grad).map(|(p, f)| p - 0.5 * h * f).collect(),
        };
        if p.iter().any(|x| !x.is_finite()) {
            return None;
        }
        Some((q, p, grad))
    }

    fn guard(&self, q: &[f64]) -> bool {
        guard_accepts(self.params, &self.q, q, self.cfg.eta)
    }
}

/// The step guard: `new` must stay in the state space, no particle may
/// move by more than `eta` times the minimum pair distance of `old`, and
/// the minimum distance may not shrink below `(1 - eta)` of its old value.
pub(crate) fn guard_accepts(params: &SystemParams, old: &[f64], new: &[f64], eta: f64) -> bool {
    if !params.in_domain(new) {
        return false;
    }
    let (n, d) = (params.n, params.dim);
    if n < 2 {
        return true;
    }
    let before = min_pair_distance(old, n, d);
    let limit = eta * before;
    let moved_too_far = (0..n).any(|i| {
        let m2: f64 = (0..d)
            .map(|k| (new[i * d + k] - old[i * d + k]).powi(2))
            .sum();
        m2 > limit * limit
    });
    !moved_too_far && min_pair_distance(new, n, d) >= (1.0 - eta) * before
}

fn ou_sigma(gamma: f64, beta: f64, h: f64) -> f64 {
    (-(-2.0 * gamma * h).exp_m1() / beta).sqrt()
}

/// Splits `ξ` into `(ξ1, ξ2)` with `w1 ξ1 + w2 ξ2 = √(w1² + w2²) ξ`, each
/// standard normal given nothing and jointly Gaussian given `ξ`.
pub(crate) fn bridge(xi: &[f64], w1: f64, w2: f64, rng: &mut StreamRng) -> (Vec<f64>, Vec<f64>) {
    let s = (w1 * w1 + w2 * w2).sqrt();
    let mut eta = vec![0.0; xi.len()];
    rng.fill_normal(&mut eta);
    if s == 0.0 {
        return (eta.clone(), eta);
    }
    let xi1 = xi
        .iter()
        .zip(&eta)
        .map(|(x, e)| (w1 * x + w2 * e) / s)
        .collect();
    let xi2 = xi
        .iter()
        .zip(&eta)
        .map(|(x, e)| (w2 * x - w1 * e) / s)
        .collect();
    (xi1, xi2)
}

/// One step of size `cfg.dt` (possibly composed of guarded sub-steps).
pub fn step(
    params: &SystemParams,
    cfg: &IntegratorConfig,
    state: &ParticleState,
    rng: &mut StreamRng,
) -> Result<(ParticleState, StepReport)> {
    cfg.validate()?;
    let mut stepper = Stepper::new(params, cfg, state)?;
    let report = stepper.step(rng)?;
    Ok((stepper.state(), report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Halving { depth: u32, rejections: u32 },
    CapHit { log_w: f64 },
    StepFailure { halvings: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub step: usize,
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RngCheckpoint {
    pub step: usize,
    pub state: Vec<u8>,
}

/// Diagnostic series at every step plus strided state snapshots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub log_w: Vec<f64>,
    pub min_dist: Vec<f64>,
    pub kinetic: Vec<f64>,
    pub stride: usize,
    /// States at steps `0, stride, 2·stride, ...`.
    pub snapshots: Vec<ParticleState>,
    pub events: Vec<Event>,
    pub rng_checkpoints: Vec<RngCheckpoint>,
    pub final_state: ParticleState,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn snapshot_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.times.iter().step_by(self.stride).copied()
    }

    pub fn total_halvings(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Halving { .. }))
            .count()
    }

    fn push(
        &mut self,
        t: f64,
        params: &SystemParams,
        lp: &LyapunovParams,
        s: &ParticleState,
    ) -> Result<f64> {
        let lw = log_w(params, lp, s)?;
        self.times.push(t);
        self.energy.push(params.total_energy(s)?);
        self.log_w.push(lw);
        self.min_dist.push(s.min_pair_distance());
        self.kinetic.push(params.kinetic_energy(s));
        Ok(lw)
    }
}

/// A run that stopped early, with everything recorded up to the stop.
#[derive(Debug)]
pub struct Interrupted {
    pub error: Error,
    pub record: Box<TrajectoryRecord>,
}

impl std::fmt::Display for Interrupted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (after {} recorded steps)",
            self.error,
            self.record.len()
        )
    }
}

impl std::error::Error for Interrupted {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Interrupted> for Error {
    fn from(e: Interrupted) -> Self {
        e.error
    }
}

/// Number of base steps covering `[0, t_end]`.
pub fn step_count(t_end: f64, dt: f64) -> usize {
    (t_end / dt).round().max(0.0) as usize
}

const RNG_CHECKPOINT_EVERY: usize = 1000;

/// Integrates to `t_end` on stream `(cfg.seed, 0)`.
pub fn simulate(
    params: &SystemParams,
    lp: &LyapunovParams,
    cfg: &IntegratorConfig,
    initial: &ParticleState,
    t_end: f64,
    stride: usize,
) -> std::result::Result<TrajectoryRecord, Interrupted> {
    let mut rng = StreamRng::new(cfg.seed, 0);
    simulate_with_rng(params, lp, cfg, initial, t_end, stride, &mut rng)
}

pub fn simulate_with_rng(
    params: &SystemParams,
    lp: &LyapunovParams,
    cfg: &IntegratorConfig,
    initial: &ParticleState,
    t_end: f64,
    stride: usize,
    rng: &mut StreamRng,
) -> std::result::Result<TrajectoryRecord, Interrupted> {
    let stride = stride.max(1);
    let mut record = TrajectoryRecord {
        times: Vec::new(),
        energy: Vec::new(),
        log_w: Vec::new(),
        min_dist: Vec::new(),
        kinetic: Vec::new(),
        stride,
        snapshots: vec![initial.clone()],
        events: Vec::new(),
        rng_checkpoints: Vec::new(),
        final_state: initial.clone(),
    };
    macro_rules! bail {
        ($e:expr) => {
            return Err(Interrupted {
                error: $e,
                record: Box::new(record),
            })
        };
    }
    if let Err(e) = cfg.validate() {
        bail!(e);
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        bail!(Error::InvalidConfig(format!(
            "end time must be finite and >= 0, got {t_end}"
        )));
    }
    let mut stepper = match Stepper::new(params, cfg, initial) {
        Ok(s) => s,
        Err(e) => bail!(e),
    };
    if let Err(e) = record.push(0.0, params, lp, initial) {
        bail!(e);
    }
    record.rng_checkpoints.push(RngCheckpoint {
        step: 0,
        state: rng.to_bytes().to_vec(),
    });

    for k in 1..=step_count(t_end, cfg.dt) {
        let t = k as f64 * cfg.dt;
        let report = match stepper.step(rng) {
            Ok(r) => r,
            Err(Error::StepFailure { halvings, .. }) => {
                record.events.push(Event {
                    step: k,
                    time: t,
                    kind: EventKind::StepFailure { halvings },
                });
                bail!(Error::StepFailure { time: t, halvings });
            }
            Err(e) => bail!(e),
        };
        if report.halvings > 0 {
            record.events.push(Event {
                step: k,
                time: t,
                kind: EventKind::Halving {
                    depth: report.halvings,
                    rejections: report.rejections,
                },
            });
        }
        let state = stepper.state();
        let lw = match record.push(t, params, lp, &state) {
            Ok(lw) => lw,
            Err(e) => bail!(e),
        };
        if k % stride == 0 {
            record.snapshots.push(state.clone());
        }
        if k % RNG_CHECKPOINT_EVERY == 0 {
            record.rng_checkpoints.push(RngCheckpoint {
                step: k,
                state: rng.to_bytes().to_vec(),
            });
        }
        record.final_state = state;
        if let Some(cap) = cfg.w_cap_log {
            if lw > cap {
                record.events.push(Event {
                    step: k,
                    time: t,
                    kind: EventKind::CapHit { log_w: lw },
                });
                bail!(Error::CapHit { time: t, log_w: lw });
            }
        }
    }
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointStatus {
    /// The upper confidence limit is below the bound.
    Holds,
    /// The estimate is below the bound but the interval straddles it.
    Inconclusive,
    /// The estimate exceeds the bound.
    Violated,
}

#[derive(Debug, Clone, Serialize)]
pub struct SupermartingalePoint {
    pub time: f64,
    /// Log of the replica mean of `W(x_t)`.
    pub log_mean_w: f64,
    pub log_ci_low: f64,
    pub log_ci_high: f64,
    /// `log(e^{-λt} W(x0) + C_W/λ)`.
    pub log_bound: f64,
    pub status: CheckpointStatus,
}

#[derive(Debug, Clone, Serialize)]
pub struct SupermartingaleReport {
    pub n_replicas: usize,
    pub fit: DriftBoundFit,
    pub log_w0: f64,
    pub points: Vec<SupermartingalePoint>,
    /// Replicas stopped by the `W` cap (held at their stopped value).
    pub capped_replicas: usize,
    pub total_halvings: usize,
}

impl SupermartingaleReport {
    pub fn passed(&self) -> bool {
        self.points
            .iter()
            .all(|p| p.status != CheckpointStatus::Violated)
    }

    pub fn worst_log_margin(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.log_mean_w - p.log_bound)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Compares the ensemble mean of `W(x_t)` with the supermartingale bound
/// at `n_checkpoints + 1` equally spaced times in `[0, t_end]`.
///
/// Replica `k` runs on stream `(cfg.seed, k)`. Replicas that hit the `W`
/// cap are stopped there, so the estimate is of `E W(x_{t ∧ τ})`.
#[allow(clippy::too_many_arguments)]
pub fn supermartingale_check(
    params: &SystemParams,
    lp: &LyapunovParams,
    cfg: &IntegratorConfig,
    fit: &DriftBoundFit,
    initial: &ParticleState,
    t_end: f64,
    n_replicas: usize,
    n_checkpoints: usize,
) -> Result<SupermartingaleReport> {
    if n_replicas == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let n_steps = step_count(t_end, cfg.dt);
    let n_checkpoints = n_checkpoints.clamp(1, n_steps.max(1));
    let checkpoint_steps: Vec<usize> = (0..=n_checkpoints)
        .map(|i| i * n_steps / n_checkpoints)
        .collect();

    let runs: Vec<(Vec<f64>, bool, usize)> = (0..n_replicas)
        .into_par_iter()
        .map(|k| {
            let mut rng = StreamRng::new(cfg.seed, k as u64);
            let (record, capped) =
                match simulate_with_rng(params, lp, cfg, initial, t_end, usize::MAX, &mut rng) {
                    Ok(r) => (r, false),
                    Err(Interrupted {
                        error: Error::CapHit { .. },
                        record,
                    }) => (*record, true),
                    Err(e) => return Err(e.error),
                };
            let last = record.log_w.len() - 1;
            let values = checkpoint_steps
                .iter()
                .map(|&s| record.log_w[s.min(last)])
                .collect();
            Ok((values, capped, record.total_halvings()))
        })
        .collect::<Result<_>>()?;

    let log_w0 = log_w(params, lp, initial)?;
    let mut boot_rng = StreamRng::new(cfg.seed, u64::MAX);
    let resamples: Vec<Vec<usize>> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            (0..n_replicas)
                .map(|_| boot_rng.index(n_replicas))
                .collect()
        })
        .collect();

    let points = checkpoint_steps
        .iter()
        .enumerate()
        .map(|(c, &s)| {
            let column: Vec<f64> = runs.iter().map(|r| r.0[c]).collect();
            let log_mean_w = log_mean_exp(column.iter().copied());
            let mut boot: Vec<f64> = resamples
                .iter()
                .map(|idx| log_mean_exp(idx.iter().map(|&i| column[i])))
                .collect();
            boot.sort_by(f64::total_cmp);
            let log_ci_low = quantile_sorted(&boot, 0.025);
            let log_ci_high = quantile_sorted(&boot, 0.975);
            let time = s as f64 * cfg.dt;
            let log_bound = fit.log_supermartingale_bound(log_w0, time);
            let status = if log_ci_high <= log_bound {
                CheckpointStatus::Holds
            } else if log_mean_w <= log_bound {
                CheckpointStatus::Inconclusive
            } else {
                CheckpointStatus::Violated
            };
            SupermartingalePoint {
                time,
                log_mean_w,
                log_ci_low,
                log_ci_high,
                log_bound,
                status,
            }
        })
        .collect();

    Ok(SupermartingaleReport {
        n_replicas,
        fit: *fit,
        log_w0,
        points,
        capped_replicas: runs.iter().filter(|r| r.1).count(),
        total_halvings: runs.iter().map(|r| r.2).sum(),
    })
}

/// `log((1/n) Σ e^{x_i})` without overflow.
pub fn log_mean_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + (x - m).exp(), n + 1));
    m + (sum / n as f64).ln()
}

pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}
