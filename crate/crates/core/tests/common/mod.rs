#![allow(dead_code)]

use clgv::kernels::{InteractionKernel, KernelFamily, Normalization};
use clgv::lyapunov::{log_w, LyapunovParams};
use clgv::potentials::ConfiningPotential;
use clgv::rng::StreamRng;
use clgv::system::{ParticleState, SystemParams};

pub fn coulomb(n: usize, d: usize, gamma: f64, beta: f64) -> SystemParams {
    SystemParams::new(
        n,
        d,
        gamma,
        beta,
        InteractionKernel::coulomb(d).unwrap(),
        ConfiningPotential::quadratic(1.0),
    )
    .unwrap()
}

pub fn riesz(n: usize, d: usize, s: f64) -> SystemParams {
    let k = InteractionKernel::new(KernelFamily::Riesz { s }, d, Normalization::Paper).unwrap();
    SystemParams::new(n, d, 1.0, 1.0, k, ConfiningPotential::quadratic(1.0)).unwrap()
}

/// Uniform random state with coordinates in `[-lim, lim]` and pair
/// distances of at least `min_dist`.
pub fn bounded_state(
    n: usize,
    d: usize,
    lim: f64,
    min_dist: f64,
    rng: &mut StreamRng,
) -> ParticleState {
    loop {
        let mut draw = || (2.0 * rng.uniform() - 1.0) * lim;
        let mut q: Vec<f64> = (0..n * d).map(|_| draw()).collect();
        let p: Vec<f64> = (0..n * d).map(|_| draw()).collect();
        if d == 1 {
            q.sort_by(f64::total_cmp);
        }
        let s = ParticleState::new(n, d, q, p).unwrap();
        if s.min_pair_distance() >= min_dist {
            return s;
        }
    }
}

/// Pair energy law of the model under test, written out independently of
/// the library: `-ln r` or `scale · r^{-nu}`.
#[derive(Debug, Clone, Copy)]
pub enum PairLaw {
    Log,
    Power { nu: f64, scale: f64 },
}

/// Quadratic confinement `ω|q|²` plus a pair law, with the `1/N`
/// mean-field prefactor.
#[derive(Debug, Clone, Copy)]
pub struct OracleModel {
    pub gamma: f64,
    pub beta: f64,
    pub omega: f64,
    pub pair: PairLaw,
}

impl OracleModel {
    /// Paper-normalized Coulomb gas in dimension `d`.
    pub fn coulomb(d: usize, gamma: f64, beta: f64, omega: f64) -> Self {
        let pair = if d == 2 {
            PairLaw::Log
        } else {
            PairLaw::Power {
                nu: d as f64 - 2.0,
                scale: 1.0 / (d as f64 - 2.0),
            }
        };
        Self {
            gamma,
            beta,
            omega,
            pair,
        }
    }

    /// Paper-normalized Riesz gas.
    pub fn riesz(s: f64, gamma: f64, beta: f64, omega: f64) -> Self {
        Self {
            gamma,
            beta,
            omega,
            pair: PairLaw::Power {
                nu: s,
                scale: 1.0 / s,
            },
        }
    }

    /// Change of the pair energy when `r²` grows by `dr2`.
    fn pair_increment(&self, r: f64, dr2: f64) -> f64 {
        let eps = dr2 / (r * r);
        match self.pair {
            PairLaw::Log => -0.5 * eps.ln_1p(),
            PairLaw::Power { nu, scale } => {
                scale * r.powf(-nu) * (-0.5 * nu * eps.ln_1p()).exp_m1()
            }
        }
    }

    /// Increments `(δ log W, δU)` when coordinate `k` of `q` (`k < N d`) or
    /// of `p` (`k >= N d`) moves by `h`. Every term is evaluated in
    /// difference form so the increments keep full relative precision.
    fn increments(&self, lp: &LyapunovParams, s: &ParticleState, k: usize, h: f64) -> (f64, f64) {
        let (n, d) = (s.n(), s.dim());
        let nd = n * d;
        let bn = 2.0 * lp.b / n as f64;
        let (i, c) = ((k % nd) / d, k % d);
        let mut d_psi = 0.0;
        let mut d_u = 0.0;
        let mut d_kin = 0.0;
        for j in (0..n).filter(|&j| j != i) {
            let dq: Vec<f64> = (0..d).map(|m| s.q[i * d + m] - s.q[j * d + m]).collect();
            let dp: Vec<f64> = (0..d).map(|m| s.p[i * d + m] - s.p[j * d + m]).collect();
            let r = dq.iter().map(|x| x * x).sum::<f64>().sqrt();
            if k < nd {
                let dr2 = 2.0 * h * dq[c] + h * h;
                let r_new = (r * r + dr2).sqrt();
                let dpdq: f64 = dp.iter().zip(&dq).map(|(a, b)| a * b).sum();
                let dr = dr2 / (r_new + r);
                d_psi -= bn * (h * dp[c] * r - dpdq * dr) / (r * r_new);
                d_u += self.pair_increment(r, dr2) / n as f64;
            } else {
                d_psi -= bn * h * dq[c] / r;
            }
        }
        if k < nd {
            let x = s.q[k];
            d_u += self.omega * (2.0 * x * h + h * h);
            d_psi += lp.c * s.p[k] * h;
        } else {
            let x = s.p[k - nd];
            d_kin = x * h + 0.5 * h * h;
            d_psi += lp.c * s.q[k - nd] * h;
        }
        (lp.a * (d_kin + d_u) + d_psi, d_u)
    }
}

/// The generator applied to `W` by central differences with step `h`,
/// divided by `W`:
///
/// `p·∇_q W - γ p·∇_p W - ∇U·∇_p W + (γ/β) Δ_p W`
///
/// `∇U` is itself a central difference of the potential energy.
pub fn fd_generator(
    model: &OracleModel,
    lp: &LyapunovParams,
    state: &ParticleState,
    h: f64,
) -> f64 {
    let nd = state.n() * state.dim();
    let mut total = 0.0;
    for k in 0..nd {
        let (lq_up, u_up) = model.increments(lp, state, k, h);
        let (lq_dn, u_dn) = model.increments(lp, state, k, -h);
        let (lp_up, _) = model.increments(lp, state, nd + k, h);
        let (lp_dn, _) = model.increments(lp, state, nd + k, -h);
        let (wq_up, wq_dn) = (lq_up.exp_m1(), lq_dn.exp_m1());
        let (wp_up, wp_dn) = (lp_up.exp_m1(), lp_dn.exp_m1());
        let dwq = (wq_up - wq_dn) / (2.0 * h);
        let dwp = (wp_up - wp_dn) / (2.0 * h);
        let d2wp = (wp_up + wp_dn) / (h * h);
        let du = (u_up - u_dn) / (2.0 * h);
        let pk = state.p[k];
        total += pk * dwq - model.gamma * pk * dwp - du * dwp + model.gamma / model.beta * d2wp;
    }
    total
}

/// Naive oracle: second differences of `exp(log W(x) - log W(x0))` from
/// the library's own `log W`. Limited by round-off in `log W` to roughly
/// `1e-16 |log W| / h²`.
pub fn fd_generator_naive(
    params: &SystemParams,
    lp: &LyapunovParams,
    state: &ParticleState,
    h: f64,
) -> f64 {
    let (n, d) = (state.n(), state.dim());
    let l0 = log_w(params, lp, state).unwrap();
    let w = |q: &[f64], p: &[f64]| {
        let s = ParticleState::new(n, d, q.to_vec(), p.to_vec()).unwrap();
        (log_w(params, lp, &s).unwrap() - l0).exp()
    };
    let u = |q: &[f64]| {
        let s = ParticleState::at_rest(n, d, q.to_vec()).unwrap();
        params.potential_energy(&s).unwrap()
    };
    let (mut q, mut p) = (state.q.clone(), state.p.clone());
    let mut total = 0.0;
    for k in 0..n * d {
        let qk = q[k];
        q[k] = qk + h;
        let (wq_up, u_up) = (w(&q, &p), u(&q));
        q[k] = qk - h;
        let (wq_dn, u_dn) = (w(&q, &p), u(&q));
        q[k] = qk;
        let pk = p[k];
        p[k] = pk + h;
        let wp_up = w(&q, &p);
        p[k] = pk - h;
        let wp_dn = w(&q, &p);
        p[k] = pk;
        let dwq = (wq_up - wq_dn) / (2.0 * h);
        let dwp = (wp_up - wp_dn) / (2.0 * h);
        let d2wp = (wp_up - 2.0 + wp_dn) / (h * h);
        let du = (u_up - u_dn) / (2.0 * h);
        total += pk * dwq - params.gamma * pk * dwp - du * dwp + params.gamma / params.beta * d2wp;
    }
    total
}

/// `|a - b| / max(|b|, 1)`.
pub fn mixed_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
