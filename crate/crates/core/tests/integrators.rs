mod common;

use clgv::diagnostics::batch_means;
use clgv::integrators::{
    simulate, simulate_with_rng, step, supermartingale_check, CheckpointStatus, EventKind,
    IntegratorConfig, Scheme,
};
use clgv::io::{decode_checkpoint, encode_checkpoint, write_trajectory_csv};
use clgv::kernels::InteractionKernel;
use clgv::lyapunov::{fit_drift_constants, LyapunovParams, StateSampler};
use clgv::potentials::ConfiningPotential;
use clgv::rng::StreamRng;
use clgv::system::{ForceMode, ParticleState, SystemParams};

use common::{bounded_state, coulomb};

fn free_particle(d: usize, gamma: f64, beta: f64) -> SystemParams {
    SystemParams::new(
        1,
        d,
        gamma,
        beta,
        InteractionKernel::coulomb(d).unwrap(),
        ConfiningPotential::zero(),
    )
    .unwrap()
}

fn cfg(scheme: Scheme, dt: f64, seed: u64) -> IntegratorConfig {
    IntegratorConfig {
        scheme,
        dt,
        seed,
        ..Default::default()
    }
}

/// Sample mean and variance of each coordinate of `p` after one step.
fn one_step_moments(
    sp: &SystemParams,
    c: &IntegratorConfig,
    p0: &[f64],
    reps: usize,
) -> Vec<(f64, f64)> {
    let s0 = ParticleState::new(1, p0.len(), vec![0.0; p0.len()], p0.to_vec()).unwrap();
    let mut rng = StreamRng::new(c.seed, 0);
    let mut sum = vec![0.0; p0.len()];
    let mut sq = vec![0.0; p0.len()];
    for _ in 0..reps {
        let (s1, _) = step(sp, c, &s0, &mut rng).unwrap();
        for k in 0..p0.len() {
            sum[k] += s1.p[k];
            sq[k] += s1.p[k] * s1.p[k];
        }
    }
    let n = reps as f64;
    (0..p0.len())
        .map(|k| {
            let m = sum[k] / n;
            (m, (sq[k] - n * m * m) / (n - 1.0))
        })
        .collect()
}

#[test]
fn baoab_free_momentum_is_exact_ou() {
    let (gamma, beta, dt) = (2.0, 0.5, 0.1);
    let sp = free_particle(2, gamma, beta);
    let c = cfg(Scheme::Baoab, dt, 17);
    let p0 = [1.0, -0.5];
    let n = 100_000;
    let var = -(-2.0 * gamma * dt).exp_m1() / beta;
    for (k, (m, v)) in one_step_moments(&sp, &c, &p0, n).into_iter().enumerate() {
        let mean = (-gamma * dt).exp() * p0[k];
        assert!(
            (m - mean).abs() < 3.0 * (var / n as f64).sqrt(),
            "mean {m} vs {mean}"
        );
        assert!(
            (v - var).abs() < 3.0 * var * (2.0 / (n as f64 - 1.0)).sqrt(),
            "var {v} vs {var}"
        );
    }
}

#[test]
fn euler_maruyama_free_momentum() {
    let (gamma, beta, dt) = (1.0, 2.0, 0.05);
    let sp = free_particle(2, gamma, beta);
    let c = cfg(Scheme::EulerMaruyama, dt, 5);
    let n = 100_000;
    let var = 2.0 * gamma * dt / beta;
    let (m, v) = one_step_moments(&sp, &c, &[2.0, 0.0], n)[0];
    let mean = 2.0 * (1.0 - gamma * dt);
    assert!((m - mean).abs() < 3.0 * (var / n as f64).sqrt());
    assert!((v - var).abs() < 3.0 * var * (2.0 / (n as f64 - 1.0)).sqrt());
}

/// Largest energy deviation along a noiseless harmonic run to time `t`.
fn max_energy_error(dt: f64, t: f64) -> f64 {
    let mut sp = SystemParams::new(
        1,
        1,
        1.0,
        1.0,
        InteractionKernel::new(clgv::kernels::KernelFamily::Log1d, 1, Default::default()).unwrap(),
        ConfiningPotential::quadratic(1.0),
    )
    .unwrap();
    sp.gamma = 0.0;
    let s0 = ParticleState::new(1, 1, vec![1.0], vec![0.3]).unwrap();
    let rec = simulate(
        &sp,
        &LyapunovParams::default(),
        &cfg(Scheme::Baoab, dt, 0),
        &s0,
        t,
        usize::MAX,
    )
    .unwrap();
    let h0 = rec.energy[0];
    rec.energy
        .iter()
        .map(|h| (h - h0).abs())
        .fold(0.0, f64::max)
}

#[test]
fn frictionless_energy_error_is_second_order() {
    let coarse = max_energy_error(0.05, 50.0);
    let fine = max_energy_error(0.025, 50.0);
    assert!(coarse < 0.01, "{coarse}");
    let ratio = coarse / fine;
    assert!((3.6..4.4).contains(&ratio), "ratio {ratio}");
}

#[test]
fn near_collision_step_halves_and_stays_apart() {
    let sp = coulomb(2, 2, 1.0, 1.0);
    let s0 =
        ParticleState::new(2, 2, vec![0.0, 0.0, 0.01, 0.0], vec![1.0, 0.0, -1.0, 0.0]).unwrap();
    for scheme in [Scheme::Baoab, Scheme::EulerMaruyama] {
        let mut rng = StreamRng::new(2, 0);
        let (s1, report) = step(&sp, &cfg(scheme, 0.01, 2), &s0, &mut rng).unwrap();
        assert!(report.halvings >= 1);
        assert!(report.substeps >= 2);
        assert!(s1.min_pair_distance() > 0.0);
    }
}

#[test]
fn same_seed_same_bytes() {
    let sp = coulomb(5, 2, 1.0, 1.0);
    let lp = LyapunovParams::default();
    let s0 = StateSampler::new(5, 2).sample(&mut StreamRng::new(1, 0));
    let run = |seed, sp: &SystemParams| {
        let rec = simulate(sp, &lp, &cfg(Scheme::Baoab, 0.01, seed), &s0, 2.0, 7).unwrap();
        let mut bytes = Vec::new();
        write_trajectory_csv(&mut bytes, &rec).unwrap();
        (rec, bytes)
    };
    let (a, bytes_a) = run(9, &sp);
    let (b, bytes_b) = run(9, &sp);
    assert_eq!(a, b);
    assert_eq!(bytes_a, bytes_b);
    assert_ne!(run(10, &sp).1, bytes_a);
    let par = sp.clone().with_force_mode(ForceMode::Parallel);
    assert_eq!(run(9, &par).1, run(9, &par).1);
}

#[test]
fn resuming_from_a_checkpoint_continues_the_same_path() {
    let sp = coulomb(4, 3, 1.0, 1.0);
    let lp = LyapunovParams::default();
    let c = cfg(Scheme::Baoab, 0.01, 3);
    let s0 = StateSampler::new(4, 3).sample(&mut StreamRng::new(4, 0));
    let whole = simulate(&sp, &lp, &c, &s0, 2.0, 1).unwrap();

    let mut rng = StreamRng::new(3, 0);
    let first = simulate_with_rng(&sp, &lp, &c, &s0, 1.0, 1, &mut rng).unwrap();
    let bytes = encode_checkpoint(&first.final_state, &rng);
    let (state, mut rng) = decode_checkpoint(&bytes).unwrap();
    let second = simulate_with_rng(&sp, &lp, &c, &state, 1.0, 1, &mut rng).unwrap();
    assert_eq!(second.final_state, whole.final_state);
    assert_eq!(&second.energy[1..], &whole.energy[101..]);
}

#[test]
fn min_distance_only_drops_sharply_with_a_logged_halving() {
    let sp = coulomb(8, 2, 1.0, 1.0);
    let lp = LyapunovParams::default();
    let mut c = cfg(Scheme::Baoab, 0.02, 8);
    c.eta = 0.25;
    let s0 = StateSampler::new(8, 2).sample(&mut StreamRng::new(8, 1));
    let rec = simulate(&sp, &lp, &c, &s0, 20.0, 100).unwrap();
    let halved: std::collections::HashSet<usize> = rec
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Halving { .. }))
        .map(|e| e.step)
        .collect();
    for k in 1..rec.len() {
        if !halved.contains(&k) {
            assert!(
                rec.min_dist[k] >= (1.0 - c.eta) * rec.min_dist[k - 1],
                "step {k}"
            );
        }
    }
}

#[test]
fn four_particles_stay_apart_to_time_100() {
    let sp = coulomb(4, 2, 1.0, 1.0);
    let s0 = StateSampler::new(4, 2).sample(&mut StreamRng::new(12, 0));
    let rec = simulate(
        &sp,
        &LyapunovParams::default(),
        &IntegratorConfig::default(),
        &s0,
        100.0,
        1000,
    )
    .unwrap();
    assert_eq!(rec.len(), 10_001);
    assert!(rec.min_dist.iter().all(|&r| r > 0.0));
    assert!(rec.energy.iter().chain(&rec.log_w).all(|x| x.is_finite()));
}

/// Stationary `(E|q|², E|p|²)` with batch-means standard errors.
fn harmonic_moments(dt: f64, t: f64, seed: u64) -> ((f64, f64), (f64, f64)) {
    let sp = SystemParams::new(
        1,
        2,
        1.0,
        1.0,
        InteractionKernel::coulomb(2).unwrap(),
        ConfiningPotential::quadratic(1.0),
    )
    .unwrap();
    let s0 = ParticleState::new(1, 2, vec![0.5, -0.5], vec![0.0, 1.0]).unwrap();
    let rec = simulate(
        &sp,
        &LyapunovParams::default(),
        &cfg(Scheme::Baoab, dt, seed),
        &s0,
        t,
        1,
    )
    .unwrap();
    let burn = (10.0 / dt) as usize;
    let q2: Vec<f64> = rec.snapshots[burn..]
        .iter()
        .map(|s| s.q.iter().map(|x| x * x).sum())
        .collect();
    let p2: Vec<f64> = rec.kinetic[burn..].iter().map(|k| 2.0 * k).collect();
    let (q, p) = (batch_means(&q2).unwrap(), batch_means(&p2).unwrap());
    ((q.mean, q.std_error), (p.mean, p.std_error))
}

#[test]
fn harmonic_second_moments_extrapolate_to_gibbs() {
    // V = |q|², β = 1, d = 2: E|q|² = d/(2ωβ) = 1, E|p|² = d/β = 2.
    let t = 4000.0;
    let runs: Vec<_> = [0.2, 0.1, 0.05]
        .iter()
        .enumerate()
        .map(|(i, &dt)| harmonic_moments(dt, t, 100 + i as u64))
        .collect();
    for (which, target) in [(0, 1.0), (1, 2.0)] {
        let pick = |r: &((f64, f64), (f64, f64))| if which == 0 { r.0 } else { r.1 };
        let (m1, s1) = pick(&runs[1]);
        let (m2, s2) = pick(&runs[2]);
        let extrapolated = (4.0 * m2 - m1) / 3.0;
        let se = (16.0 * s2 * s2 + s1 * s1).sqrt() / 3.0;
        assert!(
            (extrapolated - target).abs() < 3.0 * se,
            "moment {which}: {extrapolated} ± {se}, coarse runs {:?}",
            runs.iter().map(pick).collect::<Vec<_>>()
        );
    }
}

#[test]
fn supermartingale_harness_catches_an_inflated_rate() {
    let sp = coulomb(4, 2, 1.0, 1.0);
    let lp = LyapunovParams::default();
    let train = StateSampler::new(4, 2).sample_many(5_000, &mut StreamRng::new(21, 0));
    let fit = fit_drift_constants(&sp, &lp, &train).unwrap().bound;
    let s0 = bounded_state(4, 2, 1.0, 0.5, &mut StreamRng::new(22, 0));
    let c = cfg(Scheme::Baoab, 0.01, 23);

    let honest = supermartingale_check(&sp, &lp, &c, &fit, &s0, 2.0, 64, 10).unwrap();
    assert_eq!(honest.points[0].status, CheckpointStatus::Holds);
    assert!(honest.points[0].log_bound >= honest.log_w0);

    let mut inflated = fit;
    inflated.lambda *= 100.0;
    inflated.log_c_w = honest.log_w0 - 20.0;
    let report = supermartingale_check(&sp, &lp, &c, &inflated, &s0, 2.0, 64, 10).unwrap();
    assert!(!report.passed());
    assert!(report
        .points
        .iter()
        .any(|p| p.status == CheckpointStatus::Violated));
}
