//! Temporal encoder: turns a clip's per-frame features into one clip embedding.
//!
//! Pipeline per clip: project frames, add learnable positional encodings, run
//! a stack of pre-norm transformer layers, add the projected frames back
//! (global residual around the whole stack), then masked-mean-pool over time.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::init::{gaussian, xavier_attention, xavier_uniform};
use crate::numerics::{AttentionCache, AttentionParams, Gelu, LayerNormCache, LayerNormParams, Matrix};
use crate::params::{push_matrix, push_matrix_mut, ParamGroup, ParamMut, ParamRef, ParamSet};
use crate::scalar::Scalar;

pub const DEFAULT_T_MAX: usize = 64;
pub const POS_INIT_SIGMA: f64 = 0.02;

/// Per-frame features of one clip plus its validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence<T> {
    features: Matrix<T>,
    mask: Vec<bool>,
}

impl<T: Scalar> FrameSequence<T> {
    pub fn new(features: Matrix<T>, mask: Vec<bool>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::dim("FrameSequence", "at least one frame", 0));
        }
        if mask.len() != features.rows() {
            return Err(Error::dim("FrameSequence mask", features.rows(), mask.len()));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::DegenerateMask("clip has no valid frame"));
        }
        if !features.is_finite() {
            return Err(Error::InvalidParameter("frame features must be finite".into()));
        }
        Ok(Self { features, mask })
    }

    /// All frames valid.
    pub fn full(features: Matrix<T>) -> Result<Self> {
        let n = features.rows();
        Self::new(features, vec![true; n])
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Keeps at most `max_len` frames, picking the centers of `max_len` equal
    /// time bins when the clip is longer.
    pub fn sample_uniform(&self, max_len: usize) -> Self {
        let t = self.len();
        if t <= max_len {
            return self.clone();
        }
        let mut idx: Vec<usize> = (0..max_len).map(|i| ((2 * i + 1) * t) / (2 * max_len)).collect();
        if !idx.iter().any(|&i| self.mask[i]) {
            // every sampled frame fell on padding; swap in the first valid one
            let first = self.mask.iter().position(|&m| m).unwrap();
            let slot = idx.iter().position(|&i| i > first).unwrap_or(max_len - 1);
            idx[slot] = first;
        }
        Self {
            features: self.features.select_rows(&idx),
            mask: idx.iter().map(|&i| self.mask[i]).collect(),
        }
    }
}

/// One pre-norm transformer layer: attention and a 4x-expansion GELU MLP,
/// each inside a residual branch.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLayerParams<T> {
    pub attn: AttentionParams<T>,
    pub ln1: LayerNormParams<T>,
    pub ln2: LayerNormParams<T>,
    /// `4D × D`
    pub w1: Matrix<T>,
    /// `D × 4D`
    pub w2: Matrix<T>,
    pub activation: Gelu,
}

pub struct LayerCache<T> {
    ln1: LayerNormCache<T>,
    attn: AttentionCache<T>,
    ln2: LayerNormCache<T>,
    normed: Matrix<T>,
    pre_act: Matrix<T>,
    act: Matrix<T>,
}

impl<T: Scalar> TransformerLayerParams<T> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, dim: usize, heads: usize) -> Self {
        Self {
            attn: xavier_attention(rng, dim, heads),
            ln1: LayerNormParams::identity(dim),
            ln2: LayerNormParams::identity(dim),
            w1: xavier_uniform(rng, 4 * dim, dim),
            w2: xavier_uniform(rng, dim, 4 * dim),
            activation: Gelu::Tanh,
        }
    }

    pub fn zeros(dim: usize, heads: usize) -> Self {
        Self {
            attn: AttentionParams::zeros(dim, heads),
            ln1: LayerNormParams::zeros(dim),
            ln2: LayerNormParams::zeros(dim),
            w1: Matrix::zeros(4 * dim, dim),
            w2: Matrix::zeros(dim, 4 * dim),
            activation: Gelu::Tanh,
        }
    }

    pub fn dim(&self) -> usize {
        self.attn.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.attn.validate()?;
        let d = self.dim();
        if self.ln1.dim() != d || self.ln2.dim() != d {
            return Err(Error::dim("layer norm params", d, self.ln1.dim().min(self.ln2.dim())));
        }
        if self.w1.shape() != (4 * d, d) {
            return Err(Error::dim("mlp w1", format!("{}x{}", 4 * d, d), format!("{:?}", self.w1.shape())));
        }
        if self.w2.shape() != (d, 4 * d) {
            return Err(Error::dim("mlp w2", format!("{}x{}", d, 4 * d), format!("{:?}", self.w2.shape())));
        }
        Ok(())
    }

    /// Zeroes both residual-branch output projections, making the layer an identity map.
    pub fn silence_outputs(&mut self) {
        self.attn.wo.fill_zero();
        self.w2.fill_zero();
    }

    pub fn forward(&self, h: &Matrix<T>, mask: &[bool]) -> Result<Matrix<T>> {
        Ok(self.forward_cached(h, mask)?.0)
    }

    pub fn forward_cached(&self, h: &Matrix<T>, mask: &[bool]) -> Result<(Matrix<T>, LayerCache<T>)> {
        let (a, ln1) = self.ln1.forward_cached(h);
        let (attn_out, attn) = self.attn.forward_cached(&a, mask)?;
        let h1 = h.add(&attn_out)?;
        let (normed, ln2) = self.ln2.forward_cached(&h1);
        let pre_act = normed.matmul_t(&self.w1)?;
        let act = pre_act.map(|x| self.activation.apply(x));
        let mut out = act.matmul_t(&self.w2)?;
        out.add_assign(&h1)?;
        Ok((
            out,
            LayerCache {
                ln1,
                attn,
                ln2,
                normed,
                pre_act,
                act,
            },
        ))
    }

    /// Accumulates parameter gradients into `grad`; returns `dL/dH`.
    pub fn backward(&self, cache: &LayerCache<T>, dy: &Matrix<T>, grad: &mut Self) -> Result<Matrix<T>> {
        grad.w2.add_assign(&dy.t_matmul(&cache.act)?)?;
        let mut dpre = dy.matmul(&self.w2)?;
        for (g, &u) in dpre.as_mut_slice().iter_mut().zip(cache.pre_act.as_slice()) {
            *g *= self.activation.derivative(u);
        }
        grad.w1.add_assign(&dpre.t_matmul(&cache.normed)?)?;
        let dnormed = dpre.matmul(&self.w1)?;
        let mut dh1 = self.ln2.backward(&cache.ln2, &dnormed, &mut grad.ln2);
        dh1.add_assign(dy)?;

        let da = self.attn.backward(&cache.attn, &dh1, &mut grad.attn)?;
        let mut dh = self.ln1.backward(&cache.ln1, &da, &mut grad.ln1);
        dh.add_assign(&dh1)?;
        Ok(dh)
    }
}

impl<T: Scalar> ParamSet<T> for TransformerLayerParams<T> {
    fn visit<'a>(&'a self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamRef<'a, T>>) {
        self.attn.visit(&crate::params::join(prefix, "attn"), group, out);
        self.ln1.visit(&crate::params::join(prefix, "ln1"), group, out);
        self.ln2.visit(&crate::params::join(prefix, "ln2"), group, out);
        push_matrix(out, prefix, "w1", group, &self.w1);
        push_matrix(out, prefix, "w2", group, &self.w2);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamMut<'a, T>>) {
        self.attn.visit_mut(&crate::params::join(prefix, "attn"), group, out);
        self.ln1.visit_mut(&crate::params::join(prefix, "ln1"), group, out);
        self.ln2.visit_mut(&crate::params::join(prefix, "ln2"), group, out);
        push_matrix_mut(out, prefix, "w1", group, &mut self.w1);
        push_matrix_mut(out, prefix, "w2", group, &mut self.w2);
    }
}

/// Applies one transformer layer (pre-norm attention, then pre-norm MLP).
pub fn transformer_layer<T: Scalar>(
    h: &Matrix<T>,
    params: &TransformerLayerParams<T>,
    mask: &[bool],
) -> Result<Matrix<T>> {
    params.validate()?;
    params.forward(h, mask)
}

/// `X[t] + P[t]` for the first `T` rows of `P`.
pub fn add_positional_encoding<T: Scalar>(x: &Matrix<T>, pos: &Matrix<T>) -> Result<Matrix<T>> {
    if x.rows() > pos.rows() {
        return Err(Error::Capacity {
            len: x.rows(),
            capacity: pos.rows(),
        });
    }
    if x.cols() != pos.cols() {
        return Err(Error::dim("positional encoding width", pos.cols(), x.cols()));
    }
    let mut out = x.clone();
    for t in 0..x.rows() {
        for (o, &p) in out.row_mut(t).iter_mut().zip(pos.row(t)) {
            *o += p;
        }
    }
    Ok(out)
}

/// `Σ m_t x_t / Σ m_t`.
pub fn masked_mean_pool<T: Scalar>(x: &Matrix<T>, mask: &[bool]) -> Result<Vec<T>> {
    if mask.len() != x.rows() {
        return Err(Error::dim("masked_mean_pool mask", x.rows(), mask.len()));
    }
    let valid = mask.iter().filter(|&&m| m).count();
    if valid == 0 {
        return Err(Error::DegenerateMask("pooling over zero valid frames"));
    }
    let mut out = vec![T::zero(); x.cols()];
    for (t, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for (o, &v) in out.iter_mut().zip(x.row(t)) {
            *o += v;
        }
    }
    let n = T::from_usize(valid).unwrap();
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// Positional encodings plus the transformer stack.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalEncoderParams<T> {
    /// `T_max × D`
    pub pos: Matrix<T>,
    pub layers: Vec<TransformerLayerParams<T>>,
}

impl<T: Scalar> TemporalEncoderParams<T> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, dim: usize, heads: usize, layers: usize, t_max: usize) -> Result<Self> {
        if layers == 0 {
            return Err(Error::InvalidParameter("temporal encoder needs at least one layer".into()));
        }
        if heads == 0 || dim % heads != 0 {
            return Err(Error::InvalidParameter(format!("dim {dim} not divisible by {heads} heads")));
        }
        let pos = gaussian(rng, t_max, dim, POS_INIT_SIGMA);
        let layers = (0..layers).map(|_| TransformerLayerParams::init(rng, dim, heads)).collect();
        Ok(Self { pos, layers })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero_();
        z
    }

    pub fn dim(&self) -> usize {
        self.pos.cols()
    }

    pub fn t_max(&self) -> usize {
        self.pos.rows()
    }

    pub fn heads(&self) -> usize {
        self.layers[0].attn.heads
    }
}

impl<T: Scalar> ParamSet<T> for TemporalEncoderParams<T> {
    fn visit<'a>(&'a self, prefix: &str, _group: ParamGroup, out: &mut Vec<ParamRef<'a, T>>) {
        push_matrix(out, prefix, "pos", ParamGroup::Temporal, &self.pos);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&crate::params::join(prefix, &format!("layer{i}")), ParamGroup::Temporal, out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, _group: ParamGroup, out: &mut Vec<ParamMut<'a, T>>) {
        push_matrix_mut(out, prefix, "pos", ParamGroup::Temporal, &mut self.pos);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&crate::params::join(prefix, &format!("layer{i}")), ParamGroup::Temporal, out);
        }
    }
}

/// Forward intermediates of [`encode_video_cached`].
pub struct VideoCache<T> {
    frames: Matrix<T>,
    mask: Vec<bool>,
    layers: Vec<LayerCache<T>>,
}

/// Clip embedding: project, add positions, transformer stack, global residual,
/// masked mean pool.
pub fn encode_video<T: Scalar>(
    seq: &FrameSequence<T>,
    proj: &Matrix<T>,
    params: &TemporalEncoderParams<T>,
) -> Result<Vec<T>> {
    Ok(encode_video_cached(seq, proj, params)?.0)
}

pub fn encode_video_cached<T: Scalar>(
    seq: &FrameSequence<T>,
    proj: &Matrix<T>,
    params: &TemporalEncoderParams<T>,
) -> Result<(Vec<T>, VideoCache<T>)> {
    if proj.rows() != seq.features().cols() {
        return Err(Error::dim("visual projection rows", seq.features().cols(), proj.rows()));
    }
    if proj.cols() != params.dim() {
        return Err(Error::dim("visual projection cols", params.dim(), proj.cols()));
    }
    let projected = seq.features().matmul(proj)?;
    let mut h = add_positional_encoding(&projected, &params.pos)?;
    let mut caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (next, cache) = layer.forward_cached(&h, seq.mask())?;
        caches.push(cache);
        h = next;
    }
    h.add_assign(&projected)?;
    let pooled = masked_mean_pool(&h, seq.mask())?;
    Ok((
        pooled,
        VideoCache {
            frames: seq.features().clone(),
            mask: seq.mask().to_vec(),
            layers: caches,
        },
    ))
}

/// Backpropagates `dL/dṽ` into `proj_grad` and `grad`.
pub fn encode_video_backward<T: Scalar>(
    cache: &VideoCache<T>,
    d_out: &[T],
    params: &TemporalEncoderParams<T>,
    proj_grad: &mut Matrix<T>,
    grad: &mut TemporalEncoderParams<T>,
) -> Result<()> {
    let dh = pool_backward(&cache.mask, d_out);
    let mut d = dh.clone();
    for (i, layer) in params.layers.iter().enumerate().rev() {
        d = layer.backward(&cache.layers[i], &d, &mut grad.layers[i])?;
    }
    for t in 0..d.rows() {
        for (g, &v) in grad.pos.row_mut(t).iter_mut().zip(d.row(t)) {
            *g += v;
        }
    }
    // global residual: the projected frames feed both the stack and the sum
    d.add_assign(&dh)?;
    proj_grad.add_assign(&cache.frames.t_matmul(&d)?)?;
    Ok(())
}

/// Order-insensitive baseline: masked mean of projected frames.
pub fn encode_video_pooled<T: Scalar>(seq: &FrameSequence<T>, proj: &Matrix<T>) -> Result<Vec<T>> {
    if proj.rows() != seq.features().cols() {
        return Err(Error::dim("visual projection rows", seq.features().cols(), proj.rows()));
    }
    let pooled_frames = masked_mean_pool(seq.features(), seq.mask())?;
    proj.vecmat(&pooled_frames)
}

pub fn encode_video_pooled_backward<T: Scalar>(seq: &FrameSequence<T>, d_out: &[T], proj_grad: &mut Matrix<T>) -> Result<()> {
    let pooled_frames = masked_mean_pool(seq.features(), seq.mask())?;
    for (k, &f) in pooled_frames.iter().enumerate() {
        if f == T::zero() {
            continue;
        }
        for (g, &d) in proj_grad.row_mut(k).iter_mut().zip(d_out) {
            *g += f * d;
        }
    }
    Ok(())
}

fn pool_backward<T: Scalar>(mask: &[bool], d_out: &[T]) -> Matrix<T> {
    let valid = T::from_usize(mask.iter().filter(|&&m| m).count()).unwrap();
    let mut d = Matrix::zeros(mask.len(), d_out.len());
    for (t, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for (o, &g) in d.row_mut(t).iter_mut().zip(d_out) {
            *o = g / valid;
        }
    }
    d
}
