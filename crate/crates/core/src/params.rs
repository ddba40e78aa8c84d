//! Named, grouped views over learnable tensors, shared by the optimizer and
//! the checkpoint format.

use crate::numerics::{AttentionParams, LayerNormParams, Matrix};
use crate::scalar::Scalar;

/// Learning-rate group of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Projections and everything else trained at the base rate.
    Base,
    /// Positional encodings and temporal transformer layers.
    Temporal,
}

pub struct ParamRef<'a, T> {
    pub name: String,
    pub group: ParamGroup,
    pub shape: (usize, usize),
    pub data: &'a [T],
}

pub struct ParamMut<'a, T> {
    pub name: String,
    pub group: ParamGroup,
    pub shape: (usize, usize),
    pub data: &'a mut [T],
}

/// A collection of learnable tensors with a stable visiting order.
pub trait ParamSet<T: Scalar> {
    fn visit<'a>(&'a self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamRef<'a, T>>);
    fn visit_mut<'a>(&'a mut self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamMut<'a, T>>);

    fn params(&self) -> Vec<ParamRef<'_, T>> {
        let mut out = Vec::new();
        self.visit("", ParamGroup::Base, &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut out = Vec::new();
        self.visit_mut("", ParamGroup::Base, &mut out);
        out
    }

    fn num_scalars(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }

    fn zero_(&mut self) {
        for p in self.params_mut() {
            p.data.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    /// `self += other`, tensor by tensor. Both must share a layout.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (a, b) in self.params_mut().into_iter().zip(other.params()) {
            debug_assert_eq!(a.shape, b.shape);
            for (x, &y) in a.data.iter_mut().zip(b.data) {
                *x += y;
            }
        }
    }

    fn scale_(&mut self, c: T) {
        for p in self.params_mut() {
            p.data.iter_mut().for_each(|x| *x *= c);
        }
    }

    fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.data.iter().all(|x| x.is_finite()))
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn push_matrix<'a, T: Scalar>(
    out: &mut Vec<ParamRef<'a, T>>,
    prefix: &str,
    name: &str,
    group: ParamGroup,
    m: &'a Matrix<T>,
) {
    out.push(ParamRef {
        name: join(prefix, name),
        group,
        shape: m.shape(),
        data: m.as_slice(),
    });
}

pub(crate) fn push_matrix_mut<'a, T: Scalar>(
    out: &mut Vec<ParamMut<'a, T>>,
    prefix: &str,
    name: &str,
    group: ParamGroup,
    m: &'a mut Matrix<T>,
) {
    out.push(ParamMut {
        name: join(prefix, name),
        group,
        shape: m.shape(),
        data: m.as_mut_slice(),
    });
}

pub(crate) fn push_vec<'a, T: Scalar>(
    out: &mut Vec<ParamRef<'a, T>>,
    prefix: &str,
    name: &str,
    group: ParamGroup,
    v: &'a [T],
) {
    out.push(ParamRef {
        name: join(prefix, name),
        group,
        shape: (1, v.len()),
        data: v,
    });
}

pub(crate) fn push_vec_mut<'a, T: Scalar>(
    out: &mut Vec<ParamMut<'a, T>>,
    prefix: &str,
    name: &str,
    group: ParamGroup,
    v: &'a mut [T],
) {
    out.push(ParamMut {
        name: join(prefix, name),
        group,
        shape: (1, v.len()),
        data: v,
    });
}

impl<T: Scalar> ParamSet<T> for Matrix<T> {
    fn visit<'a>(&'a self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamRef<'a, T>>) {
        out.push(ParamRef {
            name: prefix.to_string(),
            group,
            shape: self.shape(),
            data: self.as_slice(),
        });
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamMut<'a, T>>) {
        out.push(ParamMut {
            name: prefix.to_string(),
            group,
            shape: self.shape(),
            data: self.as_mut_slice(),
        });
    }
}

impl<T: Scalar> ParamSet<T> for LayerNormParams<T> {
    fn visit<'a>(&'a self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamRef<'a, T>>) {
        push_vec(out, prefix, "gamma", group, &self.gamma);
        push_vec(out, prefix, "beta", group, &self.beta);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamMut<'a, T>>) {
        push_vec_mut(out, prefix, "gamma", group, &mut self.gamma);
        push_vec_mut(out, prefix, "beta", group, &mut self.beta);
    }
}

impl<T: Scalar> ParamSet<T> for AttentionParams<T> {
    fn visit<'a>(&'a self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamRef<'a, T>>) {
        push_matrix(out, prefix, "wq", group, &self.wq);
        push_matrix(out, prefix, "wk", group, &self.wk);
        push_matrix(out, prefix, "wv", group, &self.wv);
        push_matrix(out, prefix, "wo", group, &self.wo);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamMut<'a, T>>) {
        push_matrix_mut(out, prefix, "wq", group, &mut self.wq);
        push_matrix_mut(out, prefix, "wk", group, &mut self.wk);
        push_matrix_mut(out, prefix, "wv", group, &mut self.wv);
        push_matrix_mut(out, prefix, "wo", group, &mut self.wo);
    }
}

/// Sums per-item gradients into a fresh copy of `zero`, returning it with the
/// summed per-item losses. Items are processed in fixed-size chunks whose
/// partial sums are combined in chunk order, so the result does not depend on
/// the thread count.
pub fn accumulate_gradients<T, P, I, F>(items: &[I], zero: &P, f: F) -> crate::Result<(P, T)>
where
    T: Scalar,
    P: ParamSet<T> + Clone + Send + Sync,
    I: Sync,
    F: Fn(&I, &mut P) -> crate::Result<T> + Sync,
{
    use rayon::prelude::*;
    const CHUNK: usize = 8;
    let partials: Vec<crate::Result<(P, T)>> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = zero.clone();
            let mut loss = T::zero();
            for item in chunk {
                loss += f(item, &mut grad)?;
            }
            Ok((grad, loss))
        })
        .collect();
    let mut total = zero.clone();
    let mut loss = T::zero();
    for partial in partials {
        let (g, l) = partial?;
        total.accumulate(&g);
        loss += l;
    }
    Ok((total, loss))
}
