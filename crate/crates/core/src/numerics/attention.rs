use crate::error::{Error, Result};
use crate::numerics::kernels::softmax_in_place;
use crate::numerics::{dot, Matrix};
use crate::scalar::Scalar;

/// Additive key-mask surrogate for minus infinity.
pub const MASK_NEG: f64 = -1e9;

/// Multi-head self-attention weights.
///
/// Projections are `D×D` and applied on the right (`Q = X·W_q`); head `h`
/// owns columns `h·d_head .. (h+1)·d_head` of `W_q`, `W_k`, `W_v`, and the
/// matching rows of `W_o`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    pub heads: usize,
    pub wq: Matrix<T>,
    pub wk: Matrix<T>,
    pub wv: Matrix<T>,
    pub wo: Matrix<T>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    x: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    /// Per-head `T×T` attention probabilities.
    probs: Vec<Matrix<T>>,
    mixed: Matrix<T>,
}

impl<T: Scalar> AttentionParams<T> {
    pub fn new(heads: usize, wq: Matrix<T>, wk: Matrix<T>, wv: Matrix<T>, wo: Matrix<T>) -> Result<Self> {
        let p = Self { heads, wq, wk, wv, wo };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(dim: usize, heads: usize) -> Self {
        Self {
            heads,
            wq: Matrix::zeros(dim, dim),
            wk: Matrix::zeros(dim, dim),
            wv: Matrix::zeros(dim, dim),
            wo: Matrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.heads == 0 || d % self.heads != 0 {
            return Err(Error::InvalidParameter(format!(
                "model dim {d} not divisible by {} heads",
                self.heads
            )));
        }
        for (name, w) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv), ("wo", &self.wo)] {
            if w.shape() != (d, d) {
                return Err(Error::dim(
                    "attention weights",
                    format!("{name} {d}x{d}"),
                    format!("{:?}", w.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix<T>, mask: &[bool]) -> Result<Matrix<T>> {
        Ok(self.forward_cached(x, mask)?.0)
    }

    pub fn forward_cached(&self, x: &Matrix<T>, mask: &[bool]) -> Result<(Matrix<T>, AttentionCache<T>)> {
        let d = self.dim();
        if x.cols() != d {
            return Err(Error::dim("multi_head_attention input", d, x.cols()));
        }
        if mask.len() != x.rows() {
            return Err(Error::dim("attention mask", x.rows(), mask.len()));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::DegenerateMask("every attention key is masked"));
        }
        let t = x.rows();
        let dh = self.head_dim();
        let q = x.matmul(&self.wq)?;
        let k = x.matmul(&self.wk)?;
        let v = x.matmul(&self.wv)?;
        let scale = T::from_usize(dh).unwrap().sqrt().recip();
        let neg = T::lit(MASK_NEG);
        let mut mixed = Matrix::zeros(t, d);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            let mut p = Matrix::zeros(t, t);
            for a in 0..t {
                let qa = &q.row(a)[cols.clone()];
                let row = p.row_mut(a);
                for (b, s) in row.iter_mut().enumerate() {
                    *s = dot(qa, &k.row(b)[cols.clone()]) * scale;
                    if !mask[b] {
                        *s += neg;
                    }
                }
                softmax_in_place(row);
            }
            for a in 0..t {
                let out = &mut mixed.row_mut(a)[cols.clone()];
                for b in 0..t {
                    let w = p.get(a, b);
                    if w == T::zero() {
                        continue;
                    }
                    for (o, &vb) in out.iter_mut().zip(&v.row(b)[cols.clone()]) {
                        *o += w * vb;
                    }
                }
            }
            probs.push(p);
        }
        let y = mixed.matmul(&self.wo)?;
        let cache = AttentionCache {
            x: x.clone(),
            q,
            k,
            v,
            probs,
            mixed,
        };
        Ok((y, cache))
    }

    /// Accumulates weight gradients into `grad`; returns `dL/dX`.
    pub fn backward(&self, cache: &AttentionCache<T>, dy: &Matrix<T>, grad: &mut Self) -> Result<Matrix<T>> {
        let t = dy.rows();
        let dh = self.head_dim();
        let scale = T::from_usize(dh).unwrap().sqrt().recip();

        grad.wo.add_assign(&cache.mixed.t_matmul(dy)?)?;
        let dmixed = dy.matmul_t(&self.wo)?;

        let d = self.dim();
        let mut dq = Matrix::zeros(t, d);
        let mut dk = Matrix::zeros(t, d);
        let mut dv = Matrix::zeros(t, d);
        let mut dp = vec![T::zero(); t];
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = h * dh..(h + 1) * dh;
            for a in 0..t {
                let dout = &dmixed.row(a)[cols.clone()];
                let prow = p.row(a);
                // dL/dP[a,b] and dV[b] += P[a,b] * dOut[a]
                for b in 0..t {
                    dp[b] = dot(dout, &cache.v.row(b)[cols.clone()]);
                    let w = prow[b];
                    if w != T::zero() {
                        for (g, &o) in dv.row_mut(b)[cols.clone()].iter_mut().zip(dout) {
                            *g += w * o;
                        }
                    }
                }
                let inner = dot(prow, &dp);
                for b in 0..t {
                    let ds = prow[b] * (dp[b] - inner) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    let kb = &cache.k.row(b)[cols.clone()];
                    for (g, &kv) in dq.row_mut(a)[cols.clone()].iter_mut().zip(kb) {
                        *g += ds * kv;
                    }
                    let qa = &cache.q.row(a)[cols.clone()];
                    for (g, &qv) in dk.row_mut(b)[cols.clone()].iter_mut().zip(qa) {
                        *g += ds * qv;
                    }
                }
            }
        }
        grad.wq.add_assign(&cache.x.t_matmul(&dq)?)?;
        grad.wk.add_assign(&cache.x.t_matmul(&dk)?)?;
        grad.wv.add_assign(&cache.x.t_matmul(&dv)?)?;
        let mut dx = dq.matmul_t(&self.wq)?;
        dx.add_assign(&dk.matmul_t(&self.wk)?)?;
        dx.add_assign(&dv.matmul_t(&self.wv)?)?;
        Ok(dx)
    }
}

/// Masked multi-head self-attention over the rows of `x`. Masked rows are
/// excluded as keys; their own output rows are finite but carry no meaning.
pub fn multi_head_attention<T: Scalar>(
    x: &Matrix<T>,
    params: &AttentionParams<T>,
    mask: &[bool],
) -> Result<Matrix<T>> {
    params.validate()?;
    params.forward(x, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::{random_attention, random_matrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_frame_identity_projections_return_input() {
        let id = Matrix::<f64>::identity(4);
        let p = AttentionParams::new(2, id.clone(), id.clone(), id.clone(), id).unwrap();
        let x = Matrix::from_rows(&[[0.3, -1.0, 2.0, 0.5]]).unwrap();
        let y = multi_head_attention(&x, &p, &[true]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_attention::<f64>(&mut rng, 8, 2);
        let row = [0.1, -0.2, 0.3, 0.9, -1.0, 0.0, 0.4, 0.2];
        let x = Matrix::from_rows(&[row, row]).unwrap();
        let y = multi_head_attention(&x, &p, &[true, true]).unwrap();
        assert_eq!(y.row(0), y.row(1));
    }

    #[test]
    fn masked_row_content_is_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_attention::<f64>(&mut rng, 8, 4);
        let x = random_matrix::<f64>(&mut rng, 3, 8, 1.0);
        let mut noisy = x.clone();
        noisy.row_mut(2).copy_from_slice(random_matrix::<f64>(&mut rng, 1, 8, 50.0).row(0));
        let mask = [true, true, false];
        let a = multi_head_attention(&x, &p, &mask).unwrap();
        let b = multi_head_attention(&noisy, &p, &mask).unwrap();
        assert_eq!(a.row(0), b.row(0));
        assert_eq!(a.row(1), b.row(1));
        assert!(b.is_finite());
    }

    #[test]
    fn errors() {
        let p = AttentionParams::<f64>::zeros(4, 2);
        let x = Matrix::zeros(2, 4);
        assert!(matches!(
            multi_head_attention(&x, &p, &[false, false]),
            Err(Error::DegenerateMask(_))
        ));
        assert!(multi_head_attention(&x, &p, &[true]).is_err());
        assert!(multi_head_attention(&Matrix::zeros(2, 3), &p, &[true, true]).is_err());
        assert!(AttentionParams::<f64>::zeros(6, 4).validate().is_err());
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_attention::<f64>(&mut rng, 6, 2);
        let x = random_matrix::<f64>(&mut rng, 4, 6, 1.0);
        let w = random_matrix::<f64>(&mut rng, 4, 6, 1.0);
        let mask = [true, false, true, true];
        let f = |p: &AttentionParams<f64>, x: &Matrix<f64>| -> f64 {
            let y = p.forward(x, &mask).unwrap();
            y.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = p.forward_cached(&x, &mask).unwrap();
        let mut g = AttentionParams::zeros(6, 2);
        let dx = p.backward(&cache, &w, &mut g).unwrap();
        let h = 1e-6;
        for i in 0..x.as_slice().len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.as_mut_slice()[i] += h;
            xm.as_mut_slice()[i] -= h;
            let fd = (f(&p, &xp) - f(&p, &xm)) / (2.0 * h);
            assert!((fd - dx.as_slice()[i]).abs() < 1e-6, "dx[{i}]");
        }
        fn weight_mut(p: &mut AttentionParams<f64>, which: usize) -> &mut Matrix<f64> {
            match which {
                0 => &mut p.wq,
                1 => &mut p.wk,
                2 => &mut p.wv,
                _ => &mut p.wo,
            }
        }
        for which in 0..4 {
            let analytic = weight_mut(&mut g, which).clone();
            for i in 0..36 {
                let (mut pp, mut pm) = (p.clone(), p.clone());
                weight_mut(&mut pp, which).as_mut_slice()[i] += h;
                weight_mut(&mut pm, which).as_mut_slice()[i] -= h;
                let fd = (f(&pp, &x) - f(&pm, &x)) / (2.0 * h);
                assert!((fd - analytic.as_slice()[i]).abs() < 1e-6, "w{which}[{i}]");
            }
        }
    }
}
