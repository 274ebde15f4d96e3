//! Quasi-random sample plans in a ball about the origin.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// `count` points in the ball of radius `radius`, drawn from a Halton
/// sequence with a seeded Cranley-Patterson shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplePlan {
    pub count: usize,
    pub radius: f64,
    pub seed: u64,
}

impl Default for SamplePlan {
    fn default() -> Self {
        Self {
            count: 64,
            radius: 1.0,
            seed: 0,
        }
    }
}

impl SamplePlan {
    pub fn new(count: usize, radius: f64, seed: u64) -> Self {
        Self { count, radius, seed }
    }

    pub fn points(&self, dim: usize) -> Vec<DVector<f64>> {
        halton_ball(self.count, dim, self.radius, self.seed)
    }
}

/// Quasi-random points in the open ball by rejection from the shifted
/// Halton cube `[-1, 1]^dim`. Deterministic in `seed`; seed 0 is unshifted.
pub fn halton_ball(count: usize, dim: usize, radius: f64, seed: u64) -> Vec<DVector<f64>> {
    assert!(dim > 0);
    let bases = first_primes(dim);
    let shift: Vec<f64> = if seed == 0 {
        vec![0.0; dim]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..dim).map(|_| rng.random::<f64>()).collect()
    };
    let mut out = Vec::with_capacity(count);
    let mut index: u64 = 1;
    while out.len() < count {
        let p = DVector::from_fn(dim, |k, _| {
            let u = (radical_inverse(index, bases[k]) + shift[k]).fract();
            2.0 * u - 1.0
        });
        index += 1;
        let r2 = p.norm_squared();
        if r2 < 1.0 {
            out.push(p * radius);
        }
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut c = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|p| *p * *p <= c).all(|p| c % p != 0) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_lie_in_ball_and_are_deterministic() {
        for dim in 1..=6 {
            let a = halton_ball(100, dim, 2.0, 7);
            let b = halton_ball(100, dim, 2.0, 7);
            assert_eq!(a, b);
            assert_eq!(a.len(), 100);
            assert!(a.iter().all(|p| p.norm() < 2.0 && p.len() == dim));
        }
        assert_ne!(halton_ball(10, 3, 1.0, 1), halton_ball(10, 3, 1.0, 2));
    }

    #[test]
    fn primes() {
        assert_eq!(first_primes(6), vec![2, 3, 5, 7, 11, 13]);
    }

    #[test]
    fn radical_inverse_base_two() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
    }
}
