//! Random states for sampling-based verification.
//!
//! The mixture covers the three ways the energy can blow up: large
//! momenta, large positions and near-collisions. A small fraction of
//! states has momenta aligned with positions, which is where the `p·q`
//! cross terms of `LW/W` are largest.

use crate::rng::StreamRng;
use crate::system::{min_pair_distance, ParticleState};

#[derive(Debug, Clone, Copy)]
pub struct StateSampler {
    pub n: usize,
    pub dim: usize,
    /// Sort positions (1D ordered domain).
    pub ordered: bool,
}

const CLOUD_SCALES: [f64; 3] = [0.3, 1.0, 3.0];
const FAR_SCALES: [f64; 3] = [10.0, 30.0, 100.0];

impl StateSampler {
    pub fn new(n: usize, dim: usize) -> Self {
        Self {
            n,
            dim,
            ordered: dim == 1,
        }
    }

    pub fn sample(&self, rng: &mut StreamRng) -> ParticleState {
        loop {
            let u = rng.uniform();
            let (mut q, p) = if u < 0.45 {
                self.cloud(rng)
            } else if u < 0.7 {
                self.near_collision(rng)
            } else if u < 0.95 {
                self.far_field(rng)
            } else {
                self.aligned(rng)
            };
            if self.ordered {
                q.sort_by(f64::total_cmp);
            }
            if self.n < 2 || min_pair_distance(&q, self.n, self.dim) > 0.0 {
                return ParticleState::new(self.n, self.dim, q, p)
                    .expect("sampler produces finite states");
            }
        }
    }

    pub fn sample_many(&self, count: usize, rng: &mut StreamRng) -> Vec<ParticleState> {
        (0..count).map(|_| self.sample(rng)).collect()
    }

    fn gaussian(&self, rng: &mut StreamRng, scale: f64) -> Vec<f64> {
        (0..self.n * self.dim)
            .map(|_| scale * rng.normal())
            .collect()
    }

    fn pick(rng: &mut StreamRng, scales: &[f64]) -> f64 {
        scales[rng.index(scales.len())]
    }

    fn cloud(&self, rng: &mut StreamRng) -> (Vec<f64>, Vec<f64>) {
        let sq = Self::pick(rng, &CLOUD_SCALES);
        let sp = Self::pick(rng, &CLOUD_SCALES);
        (self.gaussian(rng, sq), self.gaussian(rng, sp))
    }

    fn near_collision(&self, rng: &mut StreamRng) -> (Vec<f64>, Vec<f64>) {
        let (mut q, p) = (self.gaussian(rng, 1.0), self.gaussian(rng, 1.0));
        if self.n >= 2 {
            let i = rng.index(self.n);
            let j = (i + 1 + rng.index(self.n - 1)) % self.n;
            let dist = 10f64.powf(-3.0 + 2.0 * rng.uniform());
            let mut dir: Vec<f64> = (0..self.dim).map(|_| rng.normal()).collect();
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
            dir.iter_mut().for_each(|x| *x /= norm);
            for k in 0..self.dim {
                q[j * self.dim + k] = q[i * self.dim + k] + dist * dir[k];
            }
        }
        (q, p)
    }

    fn far_field(&self, rng: &mut StreamRng) -> (Vec<f64>, Vec<f64>) {
        let far = Self::pick(rng, &FAR_SCALES);
        let other = Self::pick(rng, &[1.0, 10.0, 100.0]);
        let (sq, sp) = match rng.index(3) {
            0 => (far, 1.0),
            1 => (1.0, far),
            _ => (far, other),
        };
        (self.gaussian(rng, sq), self.gaussian(rng, sp))
    }

    fn aligned(&self, rng: &mut StreamRng) -> (Vec<f64>, Vec<f64>) {
        let scale = Self::pick(rng, &[1.0, 10.0, 100.0]);
        let q = self.gaussian(rng, scale);
        let ratio = Self::pick(rng, &[-3.0, -1.0, -0.3, 0.3, 1.0, 3.0]);
        let p = q
            .iter()
            .map(|x| ratio * x + 0.1 * scale * rng.normal())
            .collect();
        (q, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn states_are_valid() {
        let mut rng = StreamRng::new(11, 0);
        for (n, d) in [(1, 2), (2, 2), (5, 3), (4, 1)] {
            let s = StateSampler::new(n, d);
            for state in s.sample_many(500, &mut rng) {
                assert_eq!(state.q.len(), n * d);
                assert!(state.q.iter().chain(&state.p).all(|x| x.is_finite()));
                if n >= 2 {
                    assert!(state.min_pair_distance() > 0.0);
                }
                if d == 1 {
                    assert!(state.q.windows(2).all(|w| w[0] < w[1]));
                }
            }
        }
    }

    #[test]
    fn covers_near_collisions_and_far_field() {
        let mut rng = StreamRng::new(5, 0);
        let states = StateSampler::new(4, 2).sample_many(2000, &mut rng);
        assert!(states.iter().any(|s| s.min_pair_distance() < 1e-2));
        assert!(states.iter().any(|s| s.q.iter().any(|x| x.abs() > 50.0)));
        assert!(states.iter().any(|s| s.p.iter().any(|x| x.abs() > 50.0)));
    }

    #[test]
    fn deterministic() {
        let a = StateSampler::new(3, 2).sample_many(20, &mut StreamRng::new(9, 2));
        let b = StateSampler::new(3, 2).sample_many(20, &mut StreamRng::new(9, 2));
        assert_eq!(a, b);
    }
}
