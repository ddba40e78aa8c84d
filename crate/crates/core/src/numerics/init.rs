//! Parameter initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::numerics::{AttentionParams, Matrix};
use crate::scalar::Scalar;

/// Xavier/Glorot uniform: `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix<T> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    Matrix::from_fn(rows, cols, |_, _| T::lit(dist.sample(rng)))
}

pub fn gaussian<T: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, sigma: f64) -> Matrix<T> {
    let dist = Normal::new(0.0, sigma).expect("sigma must be finite and non-negative");
    Matrix::from_fn(rows, cols, |_, _| T::lit(dist.sample(rng)))
}

pub fn gaussian_vec<T: Scalar, R: Rng + ?Sized>(rng: &mut R, len: usize, sigma: f64) -> Vec<T> {
    gaussian(rng, 1, len, sigma).into_vec()
}

pub fn xavier_attention<T: Scalar, R: Rng + ?Sized>(rng: &mut R, dim: usize, heads: usize) -> AttentionParams<T> {
    AttentionParams {
        heads,
        wq: xavier_uniform(rng, dim, dim),
        wk: xavier_uniform(rng, dim, dim),
        wv: xavier_uniform(rng, dim, dim),
        wo: xavier_uniform(rng, dim, dim),
    }
}
