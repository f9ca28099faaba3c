//! Pairwise interaction kernels.
//!
//! Three families are supported: the Coulomb kernel (fundamental solution
//! of the Laplacian, `-log|x|` in the plane and `|x|^{2-d}` for `d >= 3`),
//! the Riesz kernel `|x|^{-s}` with `0 < s < d`, and the one-dimensional
//! log gas.
//!
//! Gradients come in two normalizations. [`Normalization::Exact`] is the
//! true gradient of [`InteractionKernel::value`]. [`Normalization::Paper`]
//! drops the dimension-dependent prefactor and uses `-x/|x|^m` with `m = d`
//! (Coulomb), `m = s + 2` (Riesz) or `m = 2` (log), which is the form the
//! drift computations in [`crate::lyapunov`] are written in. Both are
//! positive multiples of one another. To keep the Hamiltonian consistent
//! with the force, the pair energy used by [`crate::system`] is scaled by
//! the same constant (see [`InteractionKernel::energy_scale`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelFamily {
    Coulomb,
    Riesz { s: f64 },
    Log1d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Exact,
    #[default]
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionKernel {
    family: KernelFamily,
    dim: usize,
    normalization: Normalization,
}

impl InteractionKernel {
    pub fn new(family: KernelFamily, dim: usize, normalization: Normalization) -> Result<Self> {
        match family {
            KernelFamily::Coulomb if dim < 2 => {
                return Err(Error::InvalidKernel(format!(
                    "coulomb kernel needs dimension >= 2, got {dim}"
                )))
            }
            KernelFamily::Log1d if dim != 1 => {
                return Err(Error::InvalidKernel(format!(
                    "log1d kernel needs dimension 1, got {dim}"
                )))
            }
            KernelFamily::Riesz { s } if !(s > 0.0 && s < dim as f64) => {
                return Err(Error::InvalidKernel(format!(
                    "riesz exponent must satisfy 0 < s < d = {dim}, got {s}"
                )))
            }
            _ => {}
        }
        if dim == 0 {
            return Err(Error::InvalidKernel("dimension must be >= 1".into()));
        }
        Ok(Self {
            family,
            dim,
            normalization,
        })
    }

    /// Coulomb kernel in dimension `dim` with the default normalization.
    pub fn coulomb(dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Coulomb, dim, Normalization::default())
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    /// True when the kernel has a logarithmic (rather than power-law) singularity.
    pub fn is_logarithmic(&self) -> bool {
        match self.family {
            KernelFamily::Coulomb => self.dim == 2,
            KernelFamily::Log1d => true,
            KernelFamily::Riesz { .. } => false,
        }
    }

    /// Raw kernel value `K(x)`.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        let r = norm(x);
        if r == 0.0 {
            return Err(Error::ZeroSeparation);
        }
        Ok(self.value_at(r))
    }

    /// Kernel gradient in the active normalization.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        let r = norm(x);
        if r == 0.0 {
            return Err(Error::ZeroSeparation);
        }
        let g = self.repulsion_factor(r);
        Ok(x.iter().map(|xi| -g * xi).collect())
    }

    /// Exponent `e` of the pair term `|q_i - q_j|^{-e}` in the drift bound:
    /// `d - 1` for Coulomb, `s + 1` for Riesz, `1` for the 1D log gas.
    pub fn singularity_exponent(&self) -> f64 {
        self.gradient_exponent() - 1.0
    }

    /// Exponent `m` in the unnormalized gradient `-x/|x|^m`.
    pub fn gradient_exponent(&self) -> f64 {
        match self.family {
            KernelFamily::Coulomb => self.dim as f64,
            KernelFamily::Riesz { s } => s + 2.0,
            KernelFamily::Log1d => 2.0,
        }
    }

    /// Ratio between the exact gradient and the unnormalized `-x/|x|^m`.
    fn exact_prefactor(&self) -> f64 {
        match self.family {
            KernelFamily::Coulomb if self.dim >= 3 => (self.dim - 2) as f64,
            KernelFamily::Coulomb | KernelFamily::Log1d => 1.0,
            KernelFamily::Riesz { s } => s,
        }
    }

    /// Multiplier applied to [`value`](Self::value) when building the pair
    /// energy, so that the energy's gradient equals the active-mode gradient.
    /// Always 1 for [`Normalization::Exact`], and 1 for Coulomb in `d = 2, 3`.
    pub fn energy_scale(&self) -> f64 {
        match self.normalization {
            Normalization::Exact => 1.0,
            Normalization::Paper => 1.0 / self.exact_prefactor(),
        }
    }

    /// `K` as a function of the separation `r > 0`.
    pub(crate) fn value_at(&self, r: f64) -> f64 {
        match self.family {
            KernelFamily::Coulomb if self.dim == 2 => -r.ln(),
            KernelFamily::Coulomb => r.powi(2 - self.dim as i32),
            KernelFamily::Riesz { s } => r.powf(-s),
            KernelFamily::Log1d => -r.ln(),
        }
    }

    /// Pair energy at separation `r` (raw value times [`energy_scale`](Self::energy_scale)).
    pub(crate) fn energy_at(&self, r: f64) -> f64 {
        self.energy_scale() * self.value_at(r)
    }

    /// Positive `g(r)` such that the active-mode gradient is `-g(r) x`.
    pub(crate) fn repulsion_factor(&self, r: f64) -> f64 {
        let base = match self.family {
            KernelFamily::Coulomb => r.powi(-(self.dim as i32)),
            KernelFamily::Riesz { s } => r.powf(-(s + 2.0)),
            KernelFamily::Log1d => r.powi(-2),
        };
        match self.normalization {
            Normalization::Paper => base,
            Normalization::Exact => self.exact_prefactor() * base,
        }
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: len,
            });
        }
        Ok(())
    }
}

/// Constant `c_d` in `-ΔK = c_d δ_0` for the Coulomb kernel.
///
/// Exposed for reference; nothing in the dynamics depends on it.
pub fn poisson_constant(dim: usize) -> f64 {
    use std::f64::consts::PI;
    match dim {
        0 | 1 => f64::NAN,
        2 => 2.0 * PI,
        d => {
            let d = d as f64;
            d * (d - 2.0) * PI.powf(d / 2.0) / gamma_half_integer(1.0 + d / 2.0)
        }
    }
}

// Γ(x) for x a positive integer or half-integer.
fn gamma_half_integer(x: f64) -> f64 {
    let mut acc = 1.0;
    let mut y = x;
    while y > 1.0 {
        y -= 1.0;
        acc *= y;
    }
    if (y - 0.5).abs() < 1e-12 {
        acc * std::f64::consts::PI.sqrt()
    } else {
        acc
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
