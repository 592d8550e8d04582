//! Helpers shared by the integration test targets.

#![allow(dead_code)]

pub mod oracles;
pub mod properties;

use bayesdid::data::DiDSample;
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small sample with a smooth control mean, logistic selection and at least
/// three units in each arm.
pub fn random_sample(n: usize, p: usize, seed: u64) -> DiDSample {
    let mut r = rng(seed);
    loop {
        let x: Mat<f64> = Mat::from_fn(n, p, |_, _| r.random_range(-2.0..2.0));
        let d: Vec<bool> = (0..n)
            .map(|i| {
                let idx = 0.6 * x[(i, 0)];
                r.random::<f64>() < 1.0 / (1.0 + (-idx).exp())
            })
            .collect();
        let treated = d.iter().filter(|&&v| v).count();
        if treated < 3 || n - treated < 3 {
            continue;
        }
        let dy = (0..n)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut r);
                1.0 + (x[(i, 0)]).sin() + 0.5 * x[(i, p - 1)] + 0.3 * e
            })
            .collect();
        return DiDSample::new(dy, d, x).expect("valid random sample");
    }
}

/// Largest absolute entry.
pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, a| m.max(a.abs()))
}
