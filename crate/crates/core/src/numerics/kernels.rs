use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `(x - mean) / sqrt(var + eps) * gamma + beta`, with the biased variance.
pub fn layer_norm<T: Scalar>(x: &[T], gamma: &[T], beta: &[T], eps: T) -> Result<Vec<T>> {
    if gamma.len() != x.len() || beta.len() != x.len() {
        return Err(Error::dim(
            "layer_norm",
            x.len(),
            format!("gamma {} / beta {}", gamma.len(), beta.len()),
        ));
    }
    if x.is_empty() {
        return Err(Error::dim("layer_norm", "non-empty input", 0));
    }
    if !(eps > T::zero()) {
        return Err(Error::InvalidParameter("layer_norm eps must be > 0".into()));
    }
    let mut out = vec![T::zero(); x.len()];
    normalize_into(x, eps, &mut out);
    for ((o, &g), &b) in out.iter_mut().zip(gamma).zip(beta) {
        *o = *o * g + b;
    }
    Ok(out)
}

/// Writes the standardized `x` into `out`, returning `1 / sqrt(var + eps)`.
pub(crate) fn normalize_into<T: Scalar>(x: &[T], eps: T, out: &mut [T]) -> T {
    let n = T::from_usize(x.len()).unwrap();
    let mean = x.iter().copied().sum::<T>() / n;
    let mut var = T::zero();
    for &v in x {
        let d = v - mean;
        var += d * d;
    }
    var /= n;
    let inv_std = (var + eps).sqrt().recip();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - mean) * inv_std;
    }
    inv_std
}

/// Learnable per-feature affine parameters of a layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Matrix<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> LayerNormParams<T> {
    pub fn identity(dim: usize) -> Self {
        Self {
            gamma: vec![T::one(); dim],
            beta: vec![T::zero(); dim],
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            gamma: vec![T::zero(); dim],
            beta: vec![T::zero(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Row-wise layer norm.
    pub fn forward(&self, x: &Matrix<T>) -> Matrix<T> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Matrix<T>) -> (Matrix<T>, LayerNormCache<T>) {
        debug_assert_eq!(x.cols(), self.dim());
        let eps = T::lit(LAYER_NORM_EPS);
        let mut xhat = Matrix::zeros(x.rows(), x.cols());
        let mut inv_std = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            inv_std.push(normalize_into(x.row(i), eps, xhat.row_mut(i)));
        }
        let mut y = xhat.clone();
        for i in 0..y.rows() {
            for ((o, &g), &b) in y.row_mut(i).iter_mut().zip(&self.gamma).zip(&self.beta) {
                *o = *o * g + b;
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, cache: &LayerNormCache<T>, dy: &Matrix<T>, grad: &mut Self) -> Matrix<T> {
        let d = self.dim();
        let n = T::from_usize(d).unwrap();
        let mut dx = Matrix::zeros(dy.rows(), d);
        let mut dxhat = vec![T::zero(); d];
        for i in 0..dy.rows() {
            let dyr = dy.row(i);
            let xh = cache.xhat.row(i);
            let mut mean_d = T::zero();
            let mut mean_dx = T::zero();
            for k in 0..d {
                grad.gamma[k] += dyr[k] * xh[k];
                grad.beta[k] += dyr[k];
                dxhat[k] = dyr[k] * self.gamma[k];
                mean_d += dxhat[k];
                mean_dx += dxhat[k] * xh[k];
            }
            mean_d /= n;
            mean_dx /= n;
            let s = cache.inv_std[i];
            for (k, o) in dx.row_mut(i).iter_mut().enumerate() {
                *o = s * (dxhat[k] - mean_d - xh[k] * mean_dx);
            }
        }
        dx
    }
}

/// Numerically stabilized softmax (max subtraction).
pub fn softmax<T: Scalar>(x: &[T]) -> Result<Vec<T>> {
    if x.is_empty() {
        return Err(Error::dim("softmax", "non-empty input", 0));
    }
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place<T: Scalar>(x: &mut [T]) {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// GELU variant. `Tanh` is the default:
/// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Gelu {
    #[default]
    Tanh,
    Erf,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

impl Gelu {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Gelu::Tanh => gelu(x),
            Gelu::Erf => {
                let half = T::lit(0.5);
                half * x * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
            }
        }
    }

    #[inline]
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        let half = T::lit(0.5);
        match self {
            Gelu::Tanh => {
                let c = T::lit(SQRT_2_OVER_PI);
                let a = T::lit(GELU_CUBIC);
                let u = c * (x + a * x * x * x);
                let th = u.tanh();
                let du = c * (T::one() + T::lit(3.0) * a * x * x);
                half * (T::one() + th) + half * x * (T::one() - th * th) * du
            }
            Gelu::Erf => {
                let cdf = half * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
                let pdf = (-(x * x) * half).exp() * T::lit(0.398_942_280_401_432_7);
                cdf + x * pdf
            }
        }
    }
}

/// Tanh-approximated GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let u = T::lit(SQRT_2_OVER_PI) * (x + T::lit(GELU_CUBIC) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn layer_norm_examples() {
        let one = [1.0, 1.0];
        let zero = [0.0, 0.0];
        let y = layer_norm(&[1.0, -1.0], &one, &zero, 1e-5).unwrap();
        assert!(close(&y, &[1.0, -1.0], 1e-4), "{y:?}");
        let y = layer_norm(&[5.0, 5.0], &one, &zero, 1e-5).unwrap();
        assert!(close(&y, &[0.0, 0.0], 1e-12));
        let y = layer_norm(&[2.0, 4.0], &one, &one, 1e-5).unwrap();
        assert!(close(&y, &[0.0, 2.0], 1e-4), "{y:?}");
    }

    #[test]
    fn layer_norm_errors() {
        assert!(layer_norm(&[1.0, 2.0], &[1.0], &[0.0, 0.0], 1e-5).is_err());
        assert!(layer_norm(&[1.0, 2.0], &[1.0, 1.0], &[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let y = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!(close(&y, &[2.0 / 3.0, 1.0 / 3.0], 1e-12));
        let y = softmax(&[1000.0, 0.0]).unwrap();
        assert!(close(&y, &[1.0, 0.0], 1e-12));
        assert!(y.iter().all(|v| v.is_finite()));
        assert!(softmax::<f64>(&[]).is_err());
    }

    #[test]
    fn gelu_examples() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(10.0f64) - 10.0).abs() < 1e-4);
        // 0.5 * (1 + tanh(0.7978845608 * 1.044715)) = 0.841192
        assert!((gelu(1.0f64) - 0.8412).abs() < 1e-4);
        assert!(gelu(-10.0f64).abs() < 1e-4);
        assert!((Gelu::Erf.apply(1.0f64) - 0.841_344_746).abs() < 1e-8);
    }

    #[test]
    fn gelu_derivatives_match_central_differences() {
        for kind in [Gelu::Tanh, Gelu::Erf] {
            for i in -40..=40 {
                let x = i as f64 * 0.1;
                let h = 1e-6;
                let fd = (kind.apply(x + h) - kind.apply(x - h)) / (2.0 * h);
                assert!((fd - kind.derivative(x)).abs() < 1e-7, "{kind:?} at {x}");
            }
        }
    }

    #[test]
    fn layer_norm_backward_matches_central_differences() {
        let params = LayerNormParams {
            gamma: vec![0.5, -1.2, 2.0, 0.7],
            beta: vec![0.1, 0.0, -0.3, 0.2],
        };
        let x = Matrix::from_rows(&[[0.3, -1.0, 2.2, 0.5], [1.0, 1.5, -0.5, 0.0]]).unwrap();
        let weights = Matrix::from_rows(&[[0.2, -0.4, 1.0, 0.3], [-0.7, 0.1, 0.5, 0.9]]).unwrap();
        let objective = |x: &Matrix<f64>| -> f64 {
            let y = params.forward(x);
            y.as_slice().iter().zip(weights.as_slice()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = params.forward_cached(&x);
        let mut grad = LayerNormParams::zeros(4);
        let dx = params.backward(&cache, &weights, &mut grad);
        let h = 1e-6;
        for idx in 0..x.as_slice().len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[idx] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[idx] -= h;
            let fd = (objective(&xp) - objective(&xm)) / (2.0 * h);
            assert!((fd - dx.as_slice()[idx]).abs() < 1e-6);
        }
    }
}
