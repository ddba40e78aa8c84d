use rand::Rng;

use crate::numerics::init::{gaussian, xavier_attention};
use crate::numerics::{AttentionParams, Matrix};
use crate::scalar::Scalar;

pub fn random_matrix<T: Scalar>(rng: &mut impl Rng, rows: usize, cols: usize, sigma: f64) -> Matrix<T> {
    gaussian(rng, rows, cols, sigma)
}

pub fn random_attention<T: Scalar>(rng: &mut impl Rng, dim: usize, heads: usize) -> AttentionParams<T> {
    xavier_attention(rng, dim, heads)
}
