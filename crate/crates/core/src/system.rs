//! Particle configurations, energies and the O(N²) force loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::InteractionKernel;
use crate::potentials::ConfiningPotential;

/// Positions and momenta of `n` particles in `R^dim`, row-major
/// (particle-by-coordinate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    n: usize,
    dim: usize,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl ParticleState {
    pub fn new(n: usize, dim: usize, q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "need n >= 1 and dim >= 1, got n = {n}, dim = {dim}"
            )));
        }
        for (name, v) in [("q", &q), ("p", &p)] {
            if v.len() != n * dim {
                return Err(Error::DimensionMismatch {
                    expected: n * dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} has non-finite entries"
                )));
            }
        }
        Ok(Self { n, dim, q, p })
    }

    /// State at rest.
    pub fn at_rest(n: usize, dim: usize, q: Vec<f64>) -> Result<Self> {
        Self::new(n, dim, q, vec![0.0; n * dim])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn qi(&self, i: usize) -> &[f64] {
        &self.q[i * self.dim..(i + 1) * self.dim]
    }

    pub fn pi(&self, i: usize) -> &[f64] {
        &self.p[i * self.dim..(i + 1) * self.dim]
    }

    pub fn min_pair_distance(&self) -> f64 {
        min_pair_distance(&self.q, self.n, self.dim)
    }

    /// Swaps the labels of particles `a` and `b`.
    pub fn swap_particles(&mut self, a: usize, b: usize) {
        let d = self.dim;
        for k in 0..d {
            self.q.swap(a * d + k, b * d + k);
            self.p.swap(a * d + k, b * d + k);
        }
    }
}

/// Minimum over unordered pairs of `|q_i - q_j|`; `+∞` when `n < 2`.
pub fn min_pair_distance(q: &[f64], n: usize, dim: usize) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..n {
        let qi = &q[i * dim..(i + 1) * dim];
        for j in (i + 1)..n {
            let qj = &q[j * dim..(j + 1) * dim];
            let r2: f64 = qi.iter().zip(qj).map(|(a, b)| (a - b) * (a - b)).sum();
            best = best.min(r2);
        }
    }
    best.sqrt()
}

/// Reduction strategy for the force loop. Both are deterministic; they
/// differ in floating-point summation order, so results are not
/// bit-identical between modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForceMode {
    /// Each unordered pair once, contributions scattered to both rows.
    #[default]
    Serial,
    /// Rows computed independently in parallel (twice the pair work).
    Parallel,
}

#[derive(Debug, Clone)]
pub struct SystemParams {
    pub n: usize,
    pub dim: usize,
    pub gamma: f64,
    pub beta: f64,
    pub kernel: InteractionKernel,
    pub potential: ConfiningPotential,
    pub force_mode: ForceMode,
}

impl SystemParams {
    pub fn new(
        n: usize,
        dim: usize,
        gamma: f64,
        beta: f64,
        kernel: InteractionKernel,
        potential: ConfiningPotential,
    ) -> Result<Self> {
        let invalid = |field: &str, message: String| Error::Validation {
            field: field.to_string(),
            message,
        };
        if n == 0 {
            return Err(invalid("system.N", "must be >= 1".into()));
        }
        if kernel.dim() != dim {
            return Err(invalid(
                "system.d",
                format!("kernel dimension {} does not match d = {dim}", kernel.dim()),
            ));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid(
                "system.gamma",
                format!("must be positive, got {gamma}"),
            ));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(invalid(
                "system.beta",
                format!("must be positive, got {beta}"),
            ));
        }
        Ok(Self {
            n,
            dim,
            gamma,
            beta,
            kernel,
            potential,
            force_mode: ForceMode::Serial,
        })
    }

    pub fn with_force_mode(mut self, mode: ForceMode) -> Self {
        self.force_mode = mode;
        self
    }

    fn check_shape(&self, s: &ParticleState) -> Result<()> {
        if s.n != self.n || s.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.n * self.dim,
                found: s.n * s.dim,
            });
        }
        Ok(())
    }

    /// Whether the 1D ordered domain applies (`d = 1`).
    pub fn ordered_domain(&self) -> bool {
        self.dim == 1
    }

    /// Membership in the state space: finite, no coincident particles and,
    /// in one dimension, strictly increasing positions.
    pub fn in_domain(&self, q: &[f64]) -> bool {
        if q.iter().any(|x| !x.is_finite()) {
            return false;
        }
        if self.ordered_domain() {
            return q.windows(2).all(|w| w[0] < w[1]);
        }
        self.n < 2 || min_pair_distance(q, self.n, self.dim) > 0.0
    }

    pub fn kinetic_energy(&self, s: &ParticleState) -> f64 {
        0.5 * s.p.iter().map(|x| x * x).sum::<f64>()
    }

    /// `U(q) = Σ V(q_i) + (1/2N) Σ_{i≠j} K(q_i - q_j)`.
    pub fn potential_energy(&self, s: &ParticleState) -> Result<f64> {
        self.check_shape(s)?;
        self.potential_energy_q(&s.q)
    }

    pub(crate) fn potential_energy_q(&self, q: &[f64]) -> Result<f64> {
        let (n, d) = (self.n, self.dim);
        let mut external = 0.0;
        for i in 0..n {
            external += self.potential.value(&q[i * d..(i + 1) * d]);
        }
        // each unordered pair appears twice in the ordered sum
        let mut pair = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let r = dist(q, d, i, j);
                if r == 0.0 {
                    return Err(Error::ZeroSeparation);
                }
                pair += self.kernel.energy_at(r);
            }
        }
        Ok(external + pair / n as f64)
    }

    /// `H = |p|²/2 + U(q)`.
    pub fn total_energy(&self, s: &ParticleState) -> Result<f64> {
        Ok(self.kinetic_energy(s) + self.potential_energy(s)?)
    }

    /// Per-particle gradients `∂_{q_i} U`, row-major.
    pub fn grad_u(&self, s: &ParticleState) -> Result<Vec<f64>> {
        self.check_shape(s)?;
        let mut out = vec![0.0; self.n * self.dim];
        self.grad_u_into(&s.q, &mut out)?;
        Ok(out)
    }

    pub(crate) fn grad_u_into(&self, q: &[f64], out: &mut [f64]) -> Result<()> {
        match self.force_mode {
            ForceMode::Serial => self.grad_u_serial(q, out),
            ForceMode::Parallel => self.grad_u_rows(q, out),
        }
    }

    fn grad_u_serial(&self, q: &[f64], out: &mut [f64]) -> Result<()> {
        let (n, d) = (self.n, self.dim);
        for i in 0..n {
            self.potential
                .gradient_into(&q[i * d..(i + 1) * d], &mut out[i * d..(i + 1) * d]);
        }
        let inv_n = 1.0 / n as f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let r = dist(q, d, i, j);
                if r == 0.0 {
                    return Err(Error::ZeroSeparation);
                }
                let g = self.kernel.repulsion_factor(r) * inv_n;
                for k in 0..d {
                    let f = g * (q[i * d + k] - q[j * d + k]);
                    out[i * d + k] -= f;
                    out[j * d + k] += f;
                }
            }
        }
        Ok(())
    }

    fn grad_u_rows(&self, q: &[f64], out: &mut [f64]) -> Result<()> {
        let (n, d) = (self.n, self.dim);
        let inv_n = 1.0 / n as f64;
        out.par_chunks_mut(d).enumerate().try_for_each(|(i, row)| {
            self.potential.gradient_into(&q[i * d..(i + 1) * d], row);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let r = dist(q, d, i, j);
                if r == 0.0 {
                    return Err(Error::ZeroSeparation);
                }
                let g = self.kernel.repulsion_factor(r) * inv_n;
                for k in 0..d {
                    row[k] -= g * (q[i * d + k] - q[j * d + k]);
                }
            }
            Ok(())
        })
    }
}

#[inline]
pub(crate) fn dist(q: &[f64], d: usize, i: usize, j: usize) -> f64 {
    let mut r2 = 0.0;
    for k in 0..d {
        let x = q[i * d + k] - q[j * d + k];
        r2 += x * x;
    }
    r2.sqrt()
}
