//! Post-processing of trajectories and chains.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrators::{quantile_sorted, TrajectoryRecord};
use crate::lyapunov::{log_add_exp, log_w, LyapunovParams};
use crate::samplers::HmcChain;
use crate::system::{ParticleState, SystemParams};

/// A named scalar time series with strictly increasing times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservableSeries {
    pub name: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl ObservableSeries {
    pub fn new(name: impl Into<String>, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                found: values.len(),
            });
        }
        if !times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "series times must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            times,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Sources of momentum samples.
pub trait MomentumSamples {
    /// `|p|²` for each sample.
    fn squared_momenta(&self) -> Vec<f64>;
    /// `N·d`.
    fn degrees_of_freedom(&self) -> usize;
}

impl MomentumSamples for TrajectoryRecord {
    fn squared_momenta(&self) -> Vec<f64> {
        self.kinetic.iter().map(|k| 2.0 * k).collect()
    }

    fn degrees_of_freedom(&self) -> usize {
        self.final_state.n() * self.final_state.dim()
    }
}

impl MomentumSamples for HmcChain {
    fn squared_momenta(&self) -> Vec<f64> {
        self.kinetic_sq.clone()
    }

    fn degrees_of_freedom(&self) -> usize {
        self.n * self.dim
    }
}

impl MomentumSamples for [ParticleState] {
    fn squared_momenta(&self) -> Vec<f64> {
        self.iter()
            .map(|s| s.p.iter().map(|x| x * x).sum())
            .collect()
    }

    fn degrees_of_freedom(&self) -> usize {
        self.first().map_or(0, |s| s.n() * s.dim())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_batches: usize,
}

/// Mean with a batch-means standard error over `⌊√n⌋` batches (at least 2).
pub fn batch_means(xs: &[f64]) -> Result<MeanEstimate> {
    if xs.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: xs.len(),
        });
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let n_batches = ((xs.len() as f64).sqrt() as usize).max(2);
    let size = xs.len() / n_batches;
    let batch: Vec<f64> = xs
        .chunks_exact(size)
        .take(n_batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let bm = batch.iter().sum::<f64>() / n_batches as f64;
    let var = batch.iter().map(|b| (b - bm).powi(2)).sum::<f64>() / (n_batches - 1) as f64;
    Ok(MeanEstimate {
        mean,
        std_error: (var / n_batches as f64).sqrt(),
        n_batches,
    })
}

/// Mean of `|p|²/(N·d)`, whose Gibbs value is `1/β`.
pub fn equipartition_stat<S: MomentumSamples + ?Sized>(samples: &S) -> Result<MeanEstimate> {
    let dof = samples.degrees_of_freedom().max(1) as f64;
    let per_dof: Vec<f64> = samples.squared_momenta().iter().map(|x| x / dof).collect();
    batch_means(&per_dof)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum RadialReference {
    /// Uniform law on a disk: radial CDF `r²`.
    #[default]
    UniformDisk,
}

/// Radii of all particles in all configurations.
pub fn pooled_radii(positions: &[Vec<f64>], dim: usize) -> Vec<f64> {
    positions
        .iter()
        .flat_map(|q| q.chunks_exact(dim))
        .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// Disk radius estimated from the 95th percentile of the radii, so that an
/// exact uniform disk of radius `R` gives `R`.
pub fn disk_radius_estimate(sorted_radii: &[f64]) -> f64 {
    quantile_sorted(sorted_radii, 0.95) / 0.95f64.sqrt()
}

/// Kolmogorov distance between the rescaled empirical radial CDF and the
/// reference. Returns 1 when the estimated radius is zero.
pub fn radial_law_distance(
    positions: &[Vec<f64>],
    dim: usize,
    reference: RadialReference,
) -> Result<f64> {
    let RadialReference::UniformDisk = reference;
    if dim != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: dim,
        });
    }
    if let Some(q) = positions.iter().find(|q| q.len() % dim != 0) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: q.len(),
        });
    }
    let mut radii = pooled_radii(positions, dim);
    if radii.len() < 100 {
        return Err(Error::InsufficientSamples {
            needed: 100,
            got: radii.len(),
        });
    }
    radii.sort_by(f64::total_cmp);
    let scale = disk_radius_estimate(&radii);
    if !(scale > 0.0) {
        return Ok(1.0);
    }
    let n = radii.len() as f64;
    let mut d = 0.0f64;
    for (i, r) in radii.iter().enumerate() {
        let x = r / scale;
        let f = (x * x).min(1.0);
        d = d
            .max((f - i as f64 / n).abs())
            .max(((i + 1) as f64 / n - f).abs());
    }
    Ok(d.min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentialFit {
    pub rate: f64,
    /// Fitted `log(value - floor)` at `t = 0`.
    pub log_amplitude: f64,
    pub r_squared: f64,
    /// Index where the fitted suffix starts.
    pub start: usize,
    pub n_points: usize,
}

/// Least-squares fit of `log(value - floor)` against time over the longest
/// suffix on which `value > floor`.
///
/// Fails with [`Error::DegenerateSeries`] when the suffix has fewer than
/// three points or the decay is not significant (slope within three
/// standard errors of zero, or non-negative).
pub fn fit_exponential_rate(series: &ObservableSeries, floor: f64) -> Result<ExponentialFit> {
    let start = series
        .values
        .iter()
        .rposition(|v| !(v - floor > 0.0) || !v.is_finite())
        .map_or(0, |i| i + 1);
    let t = &series.times[start..];
    let y: Vec<f64> = series.values[start..]
        .iter()
        .map(|v| (v - floor).ln())
        .collect();
    let n = t.len();
    if n < 3 {
        return Err(Error::DegenerateSeries(format!(
            "only {n} trailing points above the floor"
        )));
    }
    let nf = n as f64;
    let tm = t.iter().sum::<f64>() / nf;
    let ym = y.iter().sum::<f64>() / nf;
    let stt: f64 = t.iter().map(|x| (x - tm).powi(2)).sum();
    let sty: f64 = t.iter().zip(&y).map(|(x, v)| (x - tm) * (v - ym)).sum();
    let syy: f64 = y.iter().map(|v| (v - ym).powi(2)).sum();
    let slope = sty / stt;
    let sse: f64 = t
        .iter()
        .zip(&y)
        .map(|(x, v)| (v - ym - slope * (x - tm)).powi(2))
        .sum();
    let se = (sse / (nf - 2.0) / stt).sqrt();
    if !(slope < 0.0) || -slope < 3.0 * se {
        return Err(Error::DegenerateSeries(format!(
            "no significant decay: slope {slope:.3e} with standard error {se:.3e}"
        )));
    }
    Ok(ExponentialFit {
        rate: -slope,
        log_amplitude: ym - slope * tm,
        r_squared: if syy > 0.0 { 1.0 - sse / syy } else { 1.0 },
        start,
        n_points: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateFeatures {
    pub energy: f64,
    pub log_w: f64,
    /// Zero for a single particle.
    pub min_dist: f64,
}

pub fn state_features(
    params: &SystemParams,
    lp: &LyapunovParams,
    s: &ParticleState,
) -> Result<StateFeatures> {
    let min_dist = s.min_pair_distance();
    Ok(StateFeatures {
        energy: params.total_energy(s)?,
        log_w: log_w(params, lp, s)?,
        min_dist: if min_dist.is_finite() { min_dist } else { 0.0 },
    })
}

/// Histogram proxy for the weighted total variation distance.
///
/// Both ensembles are binned on a shared `bins³` grid over
/// `(H, log W, min distance)`. Each occupied cell contributes
/// `|P_A - P_B| (1 + exp(m))`, with `m` the median `log W` of all points in
/// the cell. This is a monotone diagnostic only: it neither bounds nor
/// converges to the true distance.
pub fn weighted_tv_proxy(
    a: &[ParticleState],
    b: &[ParticleState],
    params: &SystemParams,
    lp: &LyapunovParams,
    bins: usize,
) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let bins = bins.max(1);
    let fa = a
        .iter()
        .map(|s| state_features(params, lp, s))
        .collect::<Result<Vec<_>>>()?;
    let fb = b
        .iter()
        .map(|s| state_features(params, lp, s))
        .collect::<Result<Vec<_>>>()?;
    let axes: [fn(&StateFeatures) -> f64; 3] = [|f| f.energy, |f| f.log_w, |f| f.min_dist];
    let ranges = axes.map(|g| {
        fa.iter()
            .chain(&fb)
            .map(g)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                (lo.min(x), hi.max(x))
            })
    });
    let cell = |f: &StateFeatures| {
        let mut idx = [0usize; 3];
        for (k, g) in axes.iter().enumerate() {
            let (lo, hi) = ranges[k];
            if hi > lo {
                let u = (g(f) - lo) / (hi - lo);
                idx[k] = ((u * bins as f64) as usize).min(bins - 1);
            }
        }
        idx
    };

    #[derive(Default)]
    struct Cell {
        count_a: usize,
        count_b: usize,
        log_w: Vec<f64>,
    }
    let mut cells: BTreeMap<[usize; 3], Cell> = BTreeMap::new();
    for f in &fa {
        let c = cells.entry(cell(f)).or_default();
        c.count_a += 1;
        c.log_w.push(f.log_w);
    }
    for f in &fb {
        let c = cells.entry(cell(f)).or_default();
        c.count_b += 1;
        c.log_w.push(f.log_w);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut log_total = f64::NEG_INFINITY;
    for c in cells.values_mut() {
        let diff = (c.count_a as f64 / na - c.count_b as f64 / nb).abs();
        if diff == 0.0 {
            continue;
        }
        c.log_w.sort_by(f64::total_cmp);
        let m = quantile_sorted(&c.log_w, 0.5);
        log_total = log_add_exp(log_total, diff.ln() + log_add_exp(0.0, m));
    }
    Ok(log_total.exp())
}
