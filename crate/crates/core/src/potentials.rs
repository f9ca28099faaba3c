//! Confining external potentials and a sampled check of their growth
//! conditions.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants in the growth conditions on `V`:
///
/// * `V(q) >= c1 |q|^2 - M`
/// * `c2 V(q) - M <= ∇V(q)·q <= c3 V(q) + M`
/// * `|∇V(q)| <= ε V(q) + M_ε`, tabulated for finitely many `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    #[serde(rename = "M")]
    pub m: f64,
    /// `(ε, M_ε)` pairs.
    #[serde(default)]
    pub eps_to_m: Vec<(f64, f64)>,
}

impl AssumptionConstants {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("M", self.m),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation {
                    field: format!("potential.constants.{name}"),
                    message: format!("must be a positive finite number, got {v}"),
                });
            }
        }
        for &(eps, m) in &self.eps_to_m {
            if !(eps > 0.0 && m > 0.0) {
                return Err(Error::Validation {
                    field: "potential.constants.eps_to_M".into(),
                    message: format!("entries must be positive, got ({eps}, {m})"),
                });
            }
        }
        Ok(())
    }

    /// A valid `M_ε` for the requested `ε`, taken from the tightest tabulated
    /// `ε' <= ε` (any such entry also bounds `|∇V|` at level `ε`).
    pub fn m_eps(&self, eps: f64) -> Option<f64> {
        self.eps_to_m
            .iter()
            .filter(|(e, _)| *e <= eps)
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|&(_, m)| m)
    }
}

pub trait UserPotential: Send + Sync {
    fn value(&self, q: &[f64]) -> f64;
    fn gradient(&self, q: &[f64], out: &mut [f64]);
}

impl<F, G> UserPotential for (F, G)
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
    G: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn value(&self, q: &[f64]) -> f64 {
        (self.0)(q)
    }
    fn gradient(&self, q: &[f64], out: &mut [f64]) {
        (self.1)(q, out)
    }
}

#[derive(Clone)]
pub enum PotentialForm {
    /// `V(q) = ω |q|^2`.
    Quadratic { omega: f64 },
    /// `V(q) = (1 - |q|^2)^2 / 4`.
    DoubleWell,
    /// Externally supplied value and gradient.
    User(Arc<dyn UserPotential>),
}

impl fmt::Debug for PotentialForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Quadratic { omega } => f.debug_struct("Quadratic").field("omega", omega).finish(),
            Self::DoubleWell => f.write_str("DoubleWell"),
            Self::User(_) => f.write_str("User(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConfiningPotential {
    pub form: PotentialForm,
    pub constants: Option<AssumptionConstants>,
}

impl ConfiningPotential {
    pub fn quadratic(omega: f64) -> Self {
        // ∇V·q = 2V exactly and |∇V| = 2ω|q| <= εω|q|^2 + ω/ε.
        let m = 0.01;
        let eps_to_m = [0.1, 0.25, 0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|&e| (e, omega / e + m))
            .collect();
        Self {
            form: PotentialForm::Quadratic { omega },
            constants: Some(AssumptionConstants {
                c1: omega,
                c2: 2.0,
                c3: 2.0,
                m,
                eps_to_m,
            }),
        }
    }

    /// Double well with constants found by a brute-force radial search
    /// on `r ∈ [0, 1000]` (min slacks: 0.86, 0.5, 0.75; `M_ε` rounded up
    /// from the maximum of `|∇V| - εV`).
    pub fn double_well() -> Self {
        Self {
            form: PotentialForm::DoubleWell,
            constants: Some(AssumptionConstants {
                c1: 0.125,
                c2: 2.0,
                c3: 8.0,
                m: 1.0,
                eps_to_m: vec![
                    (0.1, 6765.0),
                    (0.25, 438.0),
                    (0.5, 57.0),
                    (1.0, 8.25),
                    (2.0, 1.6),
                    (4.0, 0.45),
                ],
            }),
        }
    }

    pub fn user(p: impl UserPotential + 'static) -> Self {
        Self {
            form: PotentialForm::User(Arc::new(p)),
            constants: None,
        }
    }

    /// `V ≡ 0`; useful for isolating the interaction.
    pub fn zero() -> Self {
        Self::user((|_: &[f64]| 0.0, |_: &[f64], g: &mut [f64]| g.fill(0.0)))
    }

    pub fn with_constants(mut self, constants: AssumptionConstants) -> Self {
        self.constants = Some(constants);
        self
    }

    pub fn value(&self, q: &[f64]) -> f64 {
        match &self.form {
            PotentialForm::Quadratic { omega } => omega * sq_norm(q),
            PotentialForm::DoubleWell => {
                let u = 1.0 - sq_norm(q);
                0.25 * u * u
            }
            PotentialForm::User(f) => f.value(q),
        }
    }

    /// Writes `∇V(q)` into `out`.
    pub fn gradient_into(&self, q: &[f64], out: &mut [f64]) {
        match &self.form {
            PotentialForm::Quadratic { omega } => {
                for (o, x) in out.iter_mut().zip(q) {
                    *o = 2.0 * omega * x;
                }
            }
            PotentialForm::DoubleWell => {
                let u = 1.0 - sq_norm(q);
                for (o, x) in out.iter_mut().zip(q) {
                    *o = -u * x;
                }
            }
            PotentialForm::User(f) => f.gradient(q, out),
        }
    }

    pub fn gradient(&self, q: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; q.len()];
        self.gradient_into(q, &mut out);
        out
    }

    /// Checks the growth conditions at quasi-random points of the ball of
    /// radius `sample_radius` in `R^dim`. A pass is evidence, not proof.
    pub fn verify_assumption(
        &self,
        dim: usize,
        sample_radius: f64,
        n_samples: usize,
    ) -> Result<AssumptionReport> {
        let ac = self
            .constants
            .as_ref()
            .ok_or(Error::MissingConstants("potential has no stored constants"))?;
        if n_samples == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        if dim == 0 {
            return Err(Error::InvalidConfig("dimension must be >= 1".into()));
        }

        let mut checks = vec![
            SlackTracker::new("quadratic_lower_bound"),
            SlackTracker::new("dissipation_lower"),
            SlackTracker::new("dissipation_upper"),
        ];
        checks.extend(
            ac.eps_to_m
                .iter()
                .map(|(e, _)| SlackTracker::new(&format!("gradient_bound(eps={e})"))),
        );

        let mut grad = vec![0.0; dim];
        for q in BallPoints::new(dim, sample_radius).take(n_samples) {
            let v = self.value(&q);
            self.gradient_into(&q, &mut grad);
            let r2 = sq_norm(&q);
            let gq: f64 = grad.iter().zip(&q).map(|(a, b)| a * b).sum();
            let gn = sq_norm(&grad).sqrt();
            checks[0].observe(v - (ac.c1 * r2 - ac.m), &q);
            checks[1].observe(gq - (ac.c2 * v - ac.m), &q);
            checks[2].observe(ac.c3 * v + ac.m - gq, &q);
            for (k, &(eps, m_eps)) in ac.eps_to_m.iter().enumerate() {
                checks[3 + k].observe(eps * v + m_eps - gn, &q);
            }
        }

        Ok(AssumptionReport {
            sample_radius,
            n_samples,
            checks: checks.into_iter().map(SlackTracker::finish).collect(),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InequalityCheck {
    pub name: String,
    pub passed: bool,
    pub min_slack: f64,
    pub witness: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub sample_radius: f64,
    pub n_samples: usize,
    pub checks: Vec<InequalityCheck>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&InequalityCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct SlackTracker {
    name: String,
    min: f64,
    witness: Vec<f64>,
}

impl SlackTracker {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            min: f64::INFINITY,
            witness: Vec::new(),
        }
    }

    fn observe(&mut self, slack: f64, q: &[f64]) {
        if slack < self.min || slack.is_nan() {
            self.min = slack;
            self.witness = q.to_vec();
        }
    }

    fn finish(self) -> InequalityCheck {
        InequalityCheck {
            passed: self.min >= 0.0,
            name: self.name,
            min_slack: self.min,
            witness: self.witness,
        }
    }
}

/// Halton points in `[-1, 1]^d`, kept when inside the unit ball, scaled
/// to the requested radius. The origin is emitted first.
struct BallPoints {
    dim: usize,
    radius: f64,
    index: u64,
    started: bool,
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

impl BallPoints {
    fn new(dim: usize, radius: f64) -> Self {
        Self {
            dim,
            radius,
            index: 0,
            started: false,
        }
    }
}

impl Iterator for BallPoints {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        if !self.started {
            self.started = true;
            return Some(vec![0.0; self.dim]);
        }
        loop {
            self.index += 1;
            let x: Vec<f64> = (0..self.dim)
                .map(|k| 2.0 * radical_inverse(self.index, PRIMES[k % PRIMES.len()]) - 1.0)
                .collect();
            if sq_norm(&x) <= 1.0 {
                return Some(x.into_iter().map(|v| v * self.radius).collect());
            }
        }
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    out
}

fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn values_and_gradients() {
        let dw = ConfiningPotential::double_well();
        assert_eq!(dw.value(&[1.0, 0.0]), 0.0);
        assert_eq!(dw.value(&[0.0, 0.0]), 0.25);
        assert_eq!(dw.gradient(&[1.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(dw.gradient(&[0.0, 0.0]), vec![0.0, 0.0]);
        let quad = ConfiningPotential::quadratic(1.0);
        assert_eq!(quad.value(&[3.0, 4.0]), 25.0);
        assert_eq!(quad.gradient(&[1.0, 2.0]), vec![2.0, 4.0]);
        let zero = ConfiningPotential::zero();
        assert_eq!(zero.value(&[3.0, 4.0]), 0.0);
        assert_eq!(zero.gradient(&[3.0, 4.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn quadratic_lower_bound_has_slack_m() {
        let quad = ConfiningPotential::quadratic(1.0);
        let report = quad.verify_assumption(2, 10.0, 2000).unwrap();
        let c = report.check("quadratic_lower_bound").unwrap();
        assert!(c.passed);
        assert!(c.min_slack >= 0.01 - 1e-12);
        assert!(report.all_passed(), "{report:?}");
    }

    #[test]
    fn double_well_fails_without_offset() {
        let dw = ConfiningPotential::double_well().with_constants(AssumptionConstants {
            c1: 1.0,
            c2: 2.0,
            c3: 8.0,
            m: 0.0,
            eps_to_m: vec![],
        });
        let report = dw.verify_assumption(2, 10.0, 2000).unwrap();
        let c = report.check("quadratic_lower_bound").unwrap();
        assert!(!c.passed);
        // V - |q|^2 is negative from r = 1 on and smallest at r = sqrt(3).
        let r = sq_norm(&c.witness).sqrt();
        assert!((r - 3f64.sqrt()).abs() < 0.3, "witness radius {r}");
        let at_one = dw.value(&[1.0, 0.0]) - 1.0;
        assert!(at_one < 0.0);
    }

    #[test]
    fn double_well_shipped_constants_pass() {
        let dw = ConfiningPotential::double_well();
        for d in 1..=3 {
            let report = dw.verify_assumption(d, 10.0, 5000).unwrap();
            assert!(report.all_passed(), "d={d}: {report:?}");
        }
    }

    #[test]
    fn double_well_eighth_with_unit_offset() {
        // Independent brute force of ¼(1-r²)² - r²/8 + 1 over r ∈ [0, 10].
        let min = (0..=100_000)
            .map(|k| {
                let r = k as f64 * 1e-4;
                0.25 * (1.0 - r * r).powi(2) - r * r / 8.0 + 1.0
            })
            .fold(f64::INFINITY, f64::min);
        assert!(min > 0.0);
        let dw = ConfiningPotential::double_well().with_constants(AssumptionConstants {
            c1: 0.125,
            c2: 2.0,
            c3: 8.0,
            m: 1.0,
            eps_to_m: vec![],
        });
        let report = dw.verify_assumption(2, 10.0, 3000).unwrap();
        let c = report.check("quadratic_lower_bound").unwrap();
        assert!(c.passed);
        assert!(c.min_slack >= min - 1e-3);
    }

    #[test]
    fn missing_constants() {
        let err = ConfiningPotential::zero()
            .verify_assumption(2, 1.0, 10)
            .unwrap_err();
        assert!(matches!(err, Error::MissingConstants(_)));
    }

    #[test]
    fn m_eps_lookup() {
        let ac = ConfiningPotential::double_well().constants.unwrap();
        assert_eq!(ac.m_eps(1.0), Some(8.25));
        assert_eq!(ac.m_eps(1.5), Some(8.25));
        assert_eq!(ac.m_eps(0.05), None);
    }

    proptest! {
        #[test]
        fn gradients_match_finite_differences(q in prop::collection::vec(-5.7f64..5.7, 3)) {
            prop_assume!(sq_norm(&q) <= 100.0);
            for pot in [ConfiningPotential::quadratic(0.7), ConfiningPotential::double_well()] {
                let g = pot.gradient(&q);
                let scale = sq_norm(&g).sqrt().max(1.0);
                for a in 0..3 {
                    let h = 1e-5;
                    let mut qp = q.clone();
                    let mut qm = q.clone();
                    qp[a] += h;
                    qm[a] -= h;
                    let fd = (pot.value(&qp) - pot.value(&qm)) / (2.0 * h);
                    prop_assert!((fd - g[a]).abs() <= 1e-6 * scale, "{fd} vs {}", g[a]);
                }
            }
        }

        #[test]
        fn nonnegative(q in prop::collection::vec(-50.0f64..50.0, 2)) {
            prop_assert!(ConfiningPotential::double_well().value(&q) >= 0.0);
            prop_assert!(ConfiningPotential::quadratic(2.0).value(&q) >= 0.0);
        }
    }
}
