//! Symmetric multi-similarity loss over soft relevance labels.
//!
//! For a batch-aligned score matrix `S` (row `i` is caption `i`, column `j` is
//! clip `j`, the diagonal holds annotated pairs) each off-diagonal pair gets a
//! weight `w` derived from the relevance matrix and a gap `Δ = s_ii - s_ij`.
//! The pair loss has three regimes:
//!
//! * `w > ε`:   `relu(w·m - Δ)`        (the pair must win by a scaled margin)
//! * `|w| ≤ ε`: `relu(|w·m - Δ| - τ)`  (neutral pairs stay near parity)
//! * `w < -ε`:  `relu(-(w·m - Δ))`     (a more relevant candidate must score higher)
//!
//! Both retrieval directions are scored and their means averaged.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// Soft relevance grades in `[0, 1]`; rows are captions, columns clips.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMatrix<T> {
    data: Matrix<T>,
}

impl<T: Scalar> RelevanceMatrix<T> {
    pub fn new(data: Matrix<T>) -> Result<Self> {
        if let Some(bad) = data
            .as_slice()
            .iter()
            .find(|x| !x.is_finite() || **x < T::zero() || **x > T::one())
        {
            return Err(Error::InvalidParameter(format!("relevance grade {bad} outside [0, 1]")));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Matrix<T> {
        &self.data
    }

    pub fn into_inner(self) -> Matrix<T> {
        self.data
    }

    pub fn transpose(&self) -> Self {
        Self {
            data: self.data.transpose(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data.get(i, j)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.shape()
    }

    /// Sub-matrix over the given caption rows and clip columns.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self {
            data: Matrix::from_fn(rows.len(), cols.len(), |a, b| self.data.get(rows[a], cols[b])),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmsConfig {
    pub margin: f64,
    pub tau: f64,
    pub epsilon: f64,
}

impl Default for SmsConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            tau: 0.1,
            epsilon: 0.01,
        }
    }
}

impl SmsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) || !(self.tau >= 0.0) || !(self.epsilon >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sms config requires m > 0, tau >= 0, eps >= 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// `w_ij = R_ii - R_ij`.
pub fn weights_from_relevance<T: Scalar>(r: &RelevanceMatrix<T>) -> Result<Matrix<T>> {
    let (n, m) = r.shape();
    if n != m {
        return Err(Error::dim("weights_from_relevance (square)", n, m));
    }
    Ok(Matrix::from_fn(n, n, |i, j| r.get(i, i) - r.get(i, j)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Regime {
    Positive,
    Neutral,
    Inverted,
}

#[inline]
fn regime<T: Scalar>(w: T, eps: T) -> Regime {
    if w > eps {
        Regime::Positive
    } else if w < -eps {
        Regime::Inverted
    } else {
        Regime::Neutral
    }
}

#[inline]
fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Three-regime pair loss.
pub fn sms_pair_loss<T: Scalar>(w: T, delta: T, cfg: &SmsConfig) -> T {
    let target = w * T::lit(cfg.margin) - delta;
    match regime(w, T::lit(cfg.epsilon)) {
        Regime::Positive => relu(target),
        Regime::Neutral => relu(target.abs() - T::lit(cfg.tau)),
        Regime::Inverted => relu(-target),
    }
}

/// `d loss / d Δ`, with `relu'(0) = 0` and `|x|'(0) = 0`.
pub fn sms_pair_loss_grad<T: Scalar>(w: T, delta: T, cfg: &SmsConfig) -> T {
    let target = w * T::lit(cfg.margin) - delta;
    match regime(w, T::lit(cfg.epsilon)) {
        Regime::Positive => {
            if target > T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        }
        Regime::Neutral => {
            if target.abs() - T::lit(cfg.tau) > T::zero() {
                if target > T::zero() {
                    -T::one()
                } else if target < T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            } else {
                T::zero()
            }
        }
        Regime::Inverted => {
            if -target > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
    }
}

fn check_batch<T: Scalar>(s: &Matrix<T>, r: &RelevanceMatrix<T>) -> Result<()> {
    if s.rows() != s.cols() {
        return Err(Error::dim("sms_loss (square scores)", s.rows(), s.cols()));
    }
    if r.shape() != s.shape() {
        return Err(Error::dim(
            "sms_loss relevance",
            format!("{:?}", s.shape()),
            format!("{:?}", r.shape()),
        ));
    }
    Ok(())
}

/// Visits every scored pair: `(w, Δ, anchor, other)` where the gap is
/// `S[anchor] - S[other]`. Text→video pairs first (row-major), then
/// video→text pairs (column-major).
fn for_each_pair<T: Scalar>(
    s: &Matrix<T>,
    r: &RelevanceMatrix<T>,
    mut f: impl FnMut(bool, T, T, (usize, usize), (usize, usize)),
) {
    let n = s.rows();
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let w = r.get(i, i) - r.get(i, j);
            let delta = s.get(i, i) - s.get(i, j);
            f(true, w, delta, (i, i), (i, j));
        }
    }
    for c in 0..n {
        for q in (0..n).filter(|&q| q != c) {
            let w = r.get(c, c) - r.get(q, c);
            let delta = s.get(c, c) - s.get(q, c);
            f(false, w, delta, (c, c), (q, c));
        }
    }
}

/// Mean pair loss per direction, averaged over both directions.
pub fn sms_loss<T: Scalar>(s: &Matrix<T>, r: &RelevanceMatrix<T>, cfg: &SmsConfig) -> Result<T> {
    check_batch(s, r)?;
    let n = s.rows();
    if n < 2 {
        return Ok(T::zero());
    }
    let (mut t2v, mut v2t) = (T::zero(), T::zero());
    for_each_pair(s, r, |forward, w, delta, _, _| {
        let l = sms_pair_loss(w, delta, cfg);
        if forward {
            t2v += l;
        } else {
            v2t += l;
        }
    });
    let pairs = T::from_usize(n * (n - 1)).unwrap();
    Ok((t2v / pairs + v2t / pairs) / T::lit(2.0))
}

/// Analytic (sub)gradient of [`sms_loss`] with respect to `S`.
pub fn sms_loss_grad<T: Scalar>(s: &Matrix<T>, r: &RelevanceMatrix<T>, cfg: &SmsConfig) -> Result<Matrix<T>> {
    Ok(sms_loss_and_grad(s, r, cfg)?.1)
}

pub fn sms_loss_and_grad<T: Scalar>(s: &Matrix<T>, r: &RelevanceMatrix<T>, cfg: &SmsConfig) -> Result<(T, Matrix<T>)> {
    let loss = sms_loss(s, r, cfg)?;
    let n = s.rows();
    let mut grad = Matrix::zeros(n, n);
    if n < 2 {
        return Ok((loss, grad));
    }
    let scale = (T::lit(2.0) * T::from_usize(n * (n - 1)).unwrap()).recip();
    for_each_pair(s, r, |_, w, delta, anchor, other| {
        let g = sms_pair_loss_grad(w, delta, cfg);
        if g != T::zero() {
            let c = g * scale;
            grad.set(anchor.0, anchor.1, grad.get(anchor.0, anchor.1) + c);
            grad.set(other.0, other.1, grad.get(other.0, other.1) - c);
        }
    });
    Ok((loss, grad))
}
