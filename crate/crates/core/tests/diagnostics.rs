mod common;

use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, StudentsT};

use clgv::diagnostics::{
    equipartition_stat, fit_exponential_rate, radial_law_distance, state_features,
    weighted_tv_proxy, ObservableSeries, RadialReference,
};
use clgv::lyapunov::LyapunovParams;
use clgv::rng::StreamRng;
use clgv::system::ParticleState;
use clgv::Error;

use common::{bounded_state, coulomb};

fn tame(count: usize, seed: u64) -> Vec<ParticleState> {
    let mut rng = StreamRng::new(seed, 0);
    (0..count)
        .map(|_| bounded_state(3, 2, 2.0, 0.3, &mut rng))
        .collect()
}

/// States whose momenta are exact Gibbs draws at inverse temperature `beta`.
fn gibbs_momenta(
    count: usize,
    n: usize,
    d: usize,
    beta: f64,
    rng: &mut StreamRng,
) -> Vec<ParticleState> {
    (0..count)
        .map(|_| {
            let q = (0..n * d).map(|k| k as f64).collect();
            let p = (0..n * d).map(|_| rng.normal() / beta.sqrt()).collect();
            ParticleState::new(n, d, q, p).unwrap()
        })
        .collect()
}

#[test]
fn equipartition_intervals_have_nominal_coverage() {
    let (beta, reps, len) = (2.0, 100, 400);
    let mut rng = StreamRng::new(1, 0);
    let mut misses = 0u64;
    let mut n_batches = 0;
    for _ in 0..reps {
        let states = gibbs_momenta(len, 3, 2, beta, &mut rng);
        let est = equipartition_stat(states.as_slice()).unwrap();
        n_batches = est.n_batches;
        if (est.mean - 1.0 / beta).abs() > 3.0 * est.std_error {
            misses += 1;
        }
    }
    let t = StudentsT::new(0.0, 1.0, (n_batches - 1) as f64).unwrap();
    let p_miss = 2.0 * (1.0 - t.cdf(3.0));
    let limit = Binomial::new(p_miss, reps).unwrap().inverse_cdf(0.99);
    assert!(misses <= limit, "{misses} misses, limit {limit}");
}

#[test]
fn uniform_disk_points_are_close_to_reference() {
    let mut rng = StreamRng::new(2, 0);
    let positions: Vec<Vec<f64>> = (0..100)
        .map(|_| {
            (0..100)
                .flat_map(|_| {
                    let r = 1.7 * rng.uniform().sqrt();
                    let a = std::f64::consts::TAU * rng.uniform();
                    [r * a.cos(), r * a.sin()]
                })
                .collect()
        })
        .collect();
    let dist = radial_law_distance(&positions, 2, RadialReference::UniformDisk).unwrap();
    assert!(dist < 0.03, "{dist}");
}

#[test]
fn radial_law_degenerate_inputs() {
    let origin = vec![vec![0.0; 20]; 10];
    assert_eq!(
        radial_law_distance(&origin, 2, RadialReference::UniformDisk).unwrap(),
        1.0
    );
    let few = vec![vec![1.0; 20]; 2];
    assert!(matches!(
        radial_law_distance(&few, 2, RadialReference::UniformDisk),
        Err(Error::InsufficientSamples { .. })
    ));
    let cube = vec![vec![1.0; 300]; 2];
    assert!(radial_law_distance(&cube, 3, RadialReference::UniformDisk).is_err());
}

#[test]
fn exponential_fit_recovers_exact_decay() {
    let times: Vec<f64> = (0..50).map(|k| 0.1 * k as f64).collect();
    let floor = 0.5;
    let values = times
        .iter()
        .map(|t| floor + 3.0 * (-0.7 * t).exp())
        .collect();
    let fit =
        fit_exponential_rate(&ObservableSeries::new("W", times, values).unwrap(), floor).unwrap();
    assert!((fit.rate - 0.7).abs() < 1e-6);
    assert!((fit.log_amplitude - 3f64.ln()).abs() < 1e-6);
    assert!(fit.r_squared > 1.0 - 1e-9);
    assert_eq!((fit.start, fit.n_points), (0, 50));
}

#[test]
fn exponential_fit_uses_suffix_above_floor() {
    let times: Vec<f64> = (0..40).map(f64::from).collect();
    let mut values: Vec<f64> = times.iter().map(|t| (-0.2 * t).exp()).collect();
    values[9] = 0.0;
    let fit =
        fit_exponential_rate(&ObservableSeries::new("W", times, values).unwrap(), 0.0).unwrap();
    assert_eq!(fit.start, 10);
    assert!((fit.rate - 0.2).abs() < 1e-9);
}

#[test]
fn flat_noisy_series_is_degenerate() {
    let mut rng = StreamRng::new(3, 0);
    let times: Vec<f64> = (0..200).map(f64::from).collect();
    let values = times.iter().map(|_| 1.0 + 0.01 * rng.normal()).collect();
    let series = ObservableSeries::new("W", times, values).unwrap();
    assert!(matches!(
        fit_exponential_rate(&series, 0.0),
        Err(Error::DegenerateSeries(_))
    ));
    let short = ObservableSeries::new("W", vec![0.0, 1.0], vec![2.0, 1.0]).unwrap();
    assert!(matches!(
        fit_exponential_rate(&short, 0.0),
        Err(Error::DegenerateSeries(_))
    ));
}

#[test]
fn tv_proxy_basic_properties() {
    let sp = coulomb(3, 2, 1.0, 1.0);
    let lp = LyapunovParams::default();
    let a = tame(300, 4);
    let b = tame(300, 5);
    assert_eq!(weighted_tv_proxy(&a, &a, &sp, &lp, 8).unwrap(), 0.0);
    let ab = weighted_tv_proxy(&a, &b, &sp, &lp, 8).unwrap();
    let ba = weighted_tv_proxy(&b, &a, &sp, &lp, 8).unwrap();
    assert!(ab > 0.0 && ab.is_finite());
    assert!((ab - ba).abs() <= 1e-12 * ab);
    assert!(matches!(
        weighted_tv_proxy(&a, &[], &sp, &lp, 8),
        Err(Error::EmptyEnsemble)
    ));
}

#[test]
fn tv_proxy_of_point_masses() {
    let sp = coulomb(3, 2, 1.0, 1.0);
    let lp = LyapunovParams::default();
    let states = tame(2, 6);
    let (x, y) = (&states[0], &states[1]);
    let w = |s| state_features(&sp, &lp, s).unwrap().log_w.exp();
    let expected = 2.0 + w(x) + w(y);
    let got = weighted_tv_proxy(
        std::slice::from_ref(x),
        std::slice::from_ref(y),
        &sp,
        &lp,
        4,
    )
    .unwrap();
    assert!(
        (got - expected).abs() <= 1e-10 * expected,
        "{got} vs {expected}"
    );
}

#[test]
fn tv_proxy_of_half_subsample_is_within_resampling_noise() {
    let sp = coulomb(3, 2, 1.0, 1.0);
    let lp = LyapunovParams::default();
    let pool = tame(1_000, 7);
    let mut rng = StreamRng::new(6, 1);
    let mut resample = |k: usize| -> Vec<ParticleState> {
        (0..k)
            .map(|_| pool[rng.index(pool.len())].clone())
            .collect()
    };
    let mut boot: Vec<f64> = (0..100)
        .map(|_| {
            let (r1, r2) = (resample(pool.len()), resample(pool.len() / 2));
            weighted_tv_proxy(&r1, &r2, &sp, &lp, 6).unwrap()
        })
        .collect();
    boot.sort_by(f64::total_cmp);
    let half: Vec<ParticleState> = pool.iter().step_by(2).cloned().collect();
    let d = weighted_tv_proxy(&pool, &half, &sp, &lp, 6).unwrap();
    assert!(
        d.is_finite() && d <= boot[94],
        "{d} vs 95th percentile {}",
        boot[94]
    );
}
