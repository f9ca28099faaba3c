//! Run configuration in TOML.
//!
//! ```toml
//! seed = 7
//!
//! [system]
//! N = 4
//! d = 2
//! gamma = 1.0
//! beta = 1.0
//!
//! [kernel]
//! family = "coulomb"       # coulomb | riesz | log1d
//! normalization = "paper"  # paper | exact
//!
//! [potential]
//! form = "quadratic"       # quadratic | double_well
//! omega = 1.0
//! ```
//!
//! Every other table (`lyapunov`, `integrator`, `sampler`, `initial`,
//! `output`) is optional and falls back to defaults. Unknown keys are
//! rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrators::IntegratorConfig;
use crate::kernels::{InteractionKernel, KernelFamily, Normalization};
use crate::lyapunov::LyapunovParams;
use crate::potentials::{AssumptionConstants, ConfiningPotential};
use crate::rng::StreamRng;
use crate::samplers::HmcConfig;
use crate::system::{ForceMode, ParticleState, SystemParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub d: usize,
    pub gamma: f64,
    pub beta: f64,
    /// `serial` fixes the pair summation order.
    #[serde(default)]
    pub force_mode: ForceMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelName {
    #[default]
    Coulomb,
    Riesz,
    Log1d,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub family: KernelName,
    /// Riesz exponent; required for `riesz`, rejected otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    pub normalization: Normalization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialName {
    #[default]
    Quadratic,
    DoubleWell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialConfig {
    pub form: PotentialName,
    /// Quadratic strength in `V = ω|q|²`.
    pub omega: f64,
    /// Replaces the built-in growth constants.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constants: Option<AssumptionConstants>,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        Self {
            form: PotentialName::Quadratic,
            omega: 1.0,
            constants: None,
        }
    }
}

/// Initial condition: explicit coordinates, or Gaussian positions of the
/// given scale (sorted in 1D) drawn from stream `(seed, u64::MAX - 1)`.
/// Momenta default to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    pub scale: f64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            q: None,
            p: None,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub system: SystemConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub potential: PotentialConfig,
    #[serde(default)]
    pub lyapunov: LyapunovParams,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub sampler: HmcConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn invalid(field: &str, message: impl Into<String>) -> Error {
    Error::Validation {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Parses and validates a TOML run configuration. The top-level `seed`
/// is copied into the integrator and sampler seeds.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| {
            text[..s.start.min(text.len())].matches('\n').count() + 1
        });
        Error::Parse {
            line,
            message: e.message().to_string(),
        }
    })?;
    cfg.integrator.seed = cfg.seed;
    cfg.sampler.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Configuration with defaults everywhere except the system block.
    pub fn new(n: usize, d: usize, gamma: f64, beta: f64) -> Self {
        Self {
            seed: 0,
            system: SystemConfig {
                n,
                d,
                gamma,
                beta,
                force_mode: ForceMode::Serial,
            },
            kernel: KernelConfig {
                family: if d == 1 {
                    KernelName::Log1d
                } else {
                    KernelName::Coulomb
                },
                ..Default::default()
            },
            potential: PotentialConfig::default(),
            lyapunov: LyapunovParams::default(),
            integrator: IntegratorConfig::default(),
            sampler: HmcConfig::default(),
            initial: InitialConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let params = self.system_params()?;
        let lp = &self.lyapunov;
        if !(lp.a > 0.0 && lp.a < params.beta) {
            return Err(invalid(
                "lyapunov.a",
                format!("requires 0 < a < beta = {}, got {}", params.beta, lp.a),
            ));
        }
        for (name, v) in [
            ("b", lp.b),
            ("c", lp.c),
            ("eps1", lp.eps1),
            ("eps2", lp.eps2),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(
                    &format!("lyapunov.{name}"),
                    format!("must be positive, got {v}"),
                ));
            }
        }
        self.integrator.validate()?;
        self.sampler.validate()?;
        if let Some(c) = &self.potential.constants {
            c.validate()
                .map_err(|e| invalid("potential.constants", e.to_string()))?;
        }
        if !(self.initial.scale > 0.0 && self.initial.scale.is_finite()) {
            return Err(invalid("initial.scale", "must be positive"));
        }
        self.initial_state().map(|_| ())
    }

    pub fn kernel(&self) -> Result<InteractionKernel> {
        let d = self.system.d;
        let family = match (self.kernel.family, self.kernel.s) {
            (KernelName::Riesz, Some(s)) => KernelFamily::Riesz { s },
            (KernelName::Riesz, None) => {
                return Err(invalid("kernel.s", "required for the riesz family"))
            }
            (_, Some(_)) => return Err(invalid("kernel.s", "only valid for the riesz family")),
            (KernelName::Coulomb, None) => KernelFamily::Coulomb,
            (KernelName::Log1d, None) => KernelFamily::Log1d,
        };
        if family == KernelFamily::Log1d && d != 1 {
            return Err(invalid(
                "kernel.family",
                format!("log1d requires d = 1, got d = {d}"),
            ));
        }
        InteractionKernel::new(family, d, self.kernel.normalization).map_err(|e| match e {
            Error::InvalidKernel(m) => invalid("kernel.family", m),
            e => e,
        })
    }

    pub fn potential(&self) -> Result<ConfiningPotential> {
        let p = match self.potential.form {
            PotentialName::Quadratic => {
                let w = self.potential.omega;
                if !(w > 0.0 && w.is_finite()) {
                    return Err(invalid(
                        "potential.omega",
                        format!("must be positive, got {w}"),
                    ));
                }
                ConfiningPotential::quadratic(w)
            }
            PotentialName::DoubleWell => ConfiningPotential::double_well(),
        };
        Ok(match &self.potential.constants {
            Some(c) => p.with_constants(c.clone()),
            None => p,
        })
    }

    pub fn system_params(&self) -> Result<SystemParams> {
        let s = &self.system;
        Ok(
            SystemParams::new(s.n, s.d, s.gamma, s.beta, self.kernel()?, self.potential()?)?
                .with_force_mode(s.force_mode),
        )
    }

    /// The configured initial state. In one dimension positions must be
    /// strictly increasing.
    pub fn initial_state(&self) -> Result<ParticleState> {
        let (n, d) = (self.system.n, self.system.d);
        let q = match &self.initial.q {
            Some(q) => {
                if q.len() != n * d {
                    return Err(invalid(
                        "initial.q",
                        format!("expected {} coordinates, got {}", n * d, q.len()),
                    ));
                }
                q.clone()
            }
            None => {
                let mut rng = StreamRng::new(self.seed, u64::MAX - 1);
                let mut q: Vec<f64> = (0..n * d)
                    .map(|_| self.initial.scale * rng.normal())
                    .collect();
                if d == 1 {
                    q.sort_by(f64::total_cmp);
                }
                q
            }
        };
        let p = match &self.initial.p {
            Some(p) if p.len() != n * d => {
                return Err(invalid(
                    "initial.p",
                    format!("expected {} coordinates, got {}", n * d, p.len()),
                ))
            }
            Some(p) => p.clone(),
            None => vec![0.0; n * d],
        };
        if d == 1 && !q.windows(2).all(|w| w[0] < w[1]) {
            return Err(invalid(
                "initial.q",
                "one-dimensional positions must be strictly increasing",
            ));
        }
        let state =
            ParticleState::new(n, d, q, p).map_err(|e| invalid("initial", e.to_string()))?;
        if n >= 2 && !(state.min_pair_distance() > 0.0) {
            return Err(invalid("initial.q", "two particles coincide"));
        }
        Ok(state)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
