mod common;

use clgv::diagnostics::{batch_means, equipartition_stat};
use clgv::kernels::InteractionKernel;
use clgv::potentials::ConfiningPotential;
use clgv::rng::StreamRng;
use clgv::samplers::{
    acceptance_probability, hmc_chain, overdamped_chain, HmcConfig, OverdampedConfig,
};
use clgv::system::SystemParams;

use common::{bounded_state, coulomb};

fn harmonic(d: usize, omega: f64, beta: f64) -> SystemParams {
    SystemParams::new(
        1,
        d,
        1.0,
        beta,
        InteractionKernel::coulomb(d).unwrap(),
        ConfiningPotential::quadratic(omega),
    )
    .unwrap()
}

#[test]
fn free_overdamped_increments_are_brownian() {
    let beta = 2.0;
    let sp = SystemParams::new(
        1,
        2,
        1.0,
        beta,
        InteractionKernel::coulomb(2).unwrap(),
        ConfiningPotential::zero(),
    )
    .unwrap();
    let cfg = OverdampedConfig {
        dt: 0.01,
        n_steps: 50_000,
        seed: 3,
        ..Default::default()
    };
    let chain = overdamped_chain(&sp, &cfg, &[0.0, 0.0]).unwrap();
    let incs: Vec<f64> = chain
        .positions
        .windows(2)
        .flat_map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1]])
        .collect();
    let n = incs.len() as f64;
    let mean = incs.iter().sum::<f64>() / n;
    let var = incs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let target = 2.0 * cfg.dt / beta;
    assert!(mean.abs() < 3.0 * (target / n).sqrt());
    assert!(
        (var - target).abs() < 3.0 * target * (2.0 / n).sqrt(),
        "{var} vs {target}"
    );
}

#[test]
fn overdamped_pair_never_collides() {
    let sp = coulomb(2, 2, 1.0, 1.0);
    let cfg = OverdampedConfig {
        dt: 1e-3,
        n_steps: 100_000,
        seed: 4,
        record_every: 10,
        ..Default::default()
    };
    let chain = overdamped_chain(&sp, &cfg, &[-0.5, 0.0, 0.5, 0.0]).unwrap();
    assert_eq!(chain.positions.len(), 10_001);
    for q in &chain.positions {
        let r = ((q[0] - q[2]).powi(2) + (q[1] - q[3]).powi(2)).sqrt();
        assert!(r > 0.0 && r.is_finite());
    }
}

#[test]
fn overdamped_rejects_bad_step() {
    let sp = coulomb(2, 2, 1.0, 1.0);
    let cfg = OverdampedConfig {
        dt: 0.0,
        ..Default::default()
    };
    assert!(overdamped_chain(&sp, &cfg, &[-0.5, 0.0, 0.5, 0.0]).is_err());
}

#[test]
fn hmc_coulomb_gas_equipartition() {
    let (n, d, beta) = (16, 2, 4.0);
    let sp = coulomb(n, d, 1.0, beta);
    let q0 = bounded_state(n, d, 1.5, 0.2, &mut StreamRng::new(5, 0)).q;
    let cfg = HmcConfig {
        leapfrog_steps: 10,
        leapfrog_dt: 0.05,
        seed: 6,
        n_samples: 4_000,
        burn_in: 500,
        ..Default::default()
    };
    let chain = hmc_chain(&sp, &cfg, &q0).unwrap();
    let rate = chain.acceptance_rate();
    assert!((0.5..=0.95).contains(&rate), "acceptance {rate}");
    let ep = equipartition_stat(&chain).unwrap();
    assert!(
        (ep.mean - 1.0 / beta).abs() < 3.0 * ep.std_error,
        "{} ± {}",
        ep.mean,
        ep.std_error
    );
}

#[test]
fn acceptance_rate_matches_mean_probability() {
    let sp = coulomb(8, 2, 1.0, 2.0);
    let q0 = bounded_state(8, 2, 1.5, 0.2, &mut StreamRng::new(7, 0)).q;
    let cfg = HmcConfig {
        leapfrog_steps: 8,
        leapfrog_dt: 0.08,
        seed: 8,
        n_samples: 5_000,
        burn_in: 200,
        ..Default::default()
    };
    let chain = hmc_chain(&sp, &cfg, &q0).unwrap();
    let probs: Vec<f64> = chain
        .delta_h
        .iter()
        .map(|&dh| acceptance_probability(sp.beta, dh))
        .collect();
    let n = probs.len() as f64;
    let sigma = probs.iter().map(|a| a * (1.0 - a)).sum::<f64>().sqrt() / n;
    let gap = (chain.acceptance_rate() - chain.mean_acceptance_probability(sp.beta)).abs();
    assert!(gap <= 4.0 * sigma, "gap {gap}, sigma {sigma}");
    assert_eq!(chain.positions.len(), 5_000);
}

#[test]
fn hmc_gaussian_moments_with_full_and_partial_refresh() {
    // V = ω|q|², so q ~ N(0, 1/(2ωβ)) per coordinate.
    let (d, omega, beta) = (2, 1.0, 1.0);
    let sp = harmonic(d, omega, beta);
    for (refresh, seed) in [(1.0, 9), (0.5, 10)] {
        let cfg = HmcConfig {
            leapfrog_steps: 5,
            leapfrog_dt: 0.2,
            momentum_refresh: refresh,
            seed,
            n_samples: 20_000,
            burn_in: 200,
        };
        let chain = hmc_chain(&sp, &cfg, &[0.3, -0.2]).unwrap();
        let q2: Vec<f64> = chain
            .positions
            .iter()
            .map(|q| q.iter().map(|x| x * x).sum())
            .collect();
        let est = batch_means(&q2).unwrap();
        let target = d as f64 / (2.0 * omega * beta);
        assert!(
            (est.mean - target).abs() < 3.0 * est.std_error,
            "refresh {refresh}: {} ± {}",
            est.mean,
            est.std_error
        );
        let ep = equipartition_stat(&chain).unwrap();
        assert!((ep.mean - 1.0 / beta).abs() < 3.0 * ep.std_error);
    }
}

#[test]
fn same_seed_same_chain() {
    let sp = coulomb(4, 2, 1.0, 1.0);
    let q0 = bounded_state(4, 2, 1.0, 0.3, &mut StreamRng::new(11, 0)).q;
    let cfg = HmcConfig {
        n_samples: 200,
        seed: 12,
        ..Default::default()
    };
    let a = hmc_chain(&sp, &cfg, &q0).unwrap();
    let b = hmc_chain(&sp, &cfg, &q0).unwrap();
    assert_eq!(a.positions, b.positions);
    assert_eq!(a.accepted, b.accepted);
}
