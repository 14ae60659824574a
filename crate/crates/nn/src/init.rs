//! Seeded parameter initialisers.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Matrix;

/// Entries drawn uniformly from `[-bound, bound]`.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Matrix {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

/// Normal entries with standard deviation `1/sqrt(rows)`, for `rows x cols` maps applied as `x · W`.
pub fn fan_in_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let std = 1.0 / (rows.max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}
