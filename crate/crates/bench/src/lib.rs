//! Shared inputs for the benchmarks.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

/// `n` draws of a standard bivariate Gaussian with correlation `rho`, as two
/// one-column arrays.
pub fn correlated_gaussian(n: usize, rho: f64, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut rng = aclab::seed::rng_from(seed);
    let mut x = Array2::zeros((n, 1));
    let mut y = Array2::zeros((n, 1));
    for i in 0..n {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        x[[i, 0]] = a;
        y[[i, 0]] = rho * a + (1.0 - rho * rho).sqrt() * b;
    }
    (x, y)
}

/// Four well-separated one-dimensional clusters with their labels.
pub fn clusters(n: usize, seed: u64) -> (Array2<f64>, Vec<u64>) {
    let mut rng = aclab::seed::rng_from(seed);
    let labels: Vec<u64> = (0..n).map(|_| rng.random_range(0..4)).collect();
    let x = Array2::from_shape_fn((n, 1), |(i, _)| 10.0 * labels[i] as f64 + rng.random_range(-1.0..1.0));
    (x, labels)
}
