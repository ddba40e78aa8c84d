//! Second-stage reranking: a cross-encoder with a binary matching head scores
//! each (query, candidate) pair from the Top-K list; unscored positions take
//! the row's lowest matching score, both score matrices are min-max
//! normalized per row, and the final score is `itm + α · init`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::init::{gaussian, gaussian_vec};
use crate::numerics::{dot, softmax, Matrix};
use crate::objective::{adamw_step, cosine_lr, AdamWConfig, OptimizerState, RelevanceMatrix};
use crate::params::{accumulate_gradients, join, push_matrix, push_matrix_mut, push_vec, push_vec_mut};
use crate::params::{ParamGroup, ParamMut, ParamRef, ParamSet};
use crate::retrieval::{top_k, EmbeddingMatrix, ScoreMatrix};
use crate::scalar::Scalar;
use crate::temporal::{LayerCache, TransformerLayerParams};

pub const DEFAULT_CROSS_LAYERS: usize = 2;
const TYPE_INIT_SIGMA: f64 = 0.02;
const HEAD_INIT_SIGMA: f64 = 0.02;

/// Binary matching head: two logits `W·o + b`, class 1 is "match".
#[derive(Debug, Clone, PartialEq)]
pub struct ItmHead<T> {
    /// `2 × D`
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ItmHead<T> {
    pub fn logits(&self, o: &[T]) -> Result<[T; 2]> {
        if o.len() != self.weight.cols() {
            return Err(Error::dim("itm head input", self.weight.cols(), o.len()));
        }
        Ok([
            dot(self.weight.row(0), o) + self.bias[0],
            dot(self.weight.row(1), o) + self.bias[1],
        ])
    }
}

/// Matching probability: `softmax(W·o + b)[1]`.
pub fn itm_score<T: Scalar>(o: &[T], head: &ItmHead<T>) -> Result<T> {
    let z = head.logits(o)?;
    Ok(softmax(&z)?[1])
}

/// Cross-encoder over the two-token sequence `[v + type_video; q + type_text]`;
/// the output is the final hidden state of the video token.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossEncoderParams<T> {
    pub type_video: Vec<T>,
    pub type_text: Vec<T>,
    pub layers: Vec<TransformerLayerParams<T>>,
    pub itm: ItmHead<T>,
}

impl<T: Scalar> CrossEncoderParams<T> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, dim: usize, heads: usize, layers: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::InvalidParameter(format!("dim {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            type_video: gaussian_vec(rng, dim, TYPE_INIT_SIGMA),
            type_text: gaussian_vec(rng, dim, TYPE_INIT_SIGMA),
            layers: (0..layers).map(|_| TransformerLayerParams::init(rng, dim, heads)).collect(),
            itm: ItmHead {
                weight: gaussian(rng, 2, dim, HEAD_INIT_SIGMA),
                bias: vec![T::zero(); 2],
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.type_video.len()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero_();
        z
    }
}

impl<T: Scalar> ParamSet<T> for CrossEncoderParams<T> {
    fn visit<'a>(&'a self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamRef<'a, T>>) {
        push_vec(out, prefix, "type_video", group, &self.type_video);
        push_vec(out, prefix, "type_text", group, &self.type_text);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layer{i}")), group, out);
        }
        push_matrix(out, prefix, "itm.weight", group, &self.itm.weight);
        push_vec(out, prefix, "itm.bias", group, &self.itm.bias);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamMut<'a, T>>) {
        push_vec_mut(out, prefix, "type_video", group, &mut self.type_video);
        push_vec_mut(out, prefix, "type_text", group, &mut self.type_text);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layer{i}")), group, out);
        }
        push_matrix_mut(out, prefix, "itm.weight", group, &mut self.itm.weight);
        push_vec_mut(out, prefix, "itm.bias", group, &mut self.itm.bias);
    }
}

const PAIR_MASK: [bool; 2] = [true, true];

pub struct CrossCache<T> {
    layers: Vec<LayerCache<T>>,
}

pub fn cross_encode<T: Scalar>(v: &[T], q: &[T], params: &CrossEncoderParams<T>) -> Result<Vec<T>> {
    Ok(cross_encode_cached(v, q, params)?.0)
}

pub fn cross_encode_cached<T: Scalar>(v: &[T], q: &[T], params: &CrossEncoderParams<T>) -> Result<(Vec<T>, CrossCache<T>)> {
    let d = params.dim();
    if v.len() != d || q.len() != d {
        return Err(Error::dim("cross_encode inputs", d, format!("video {} / text {}", v.len(), q.len())));
    }
    let mut h = Matrix::zeros(2, d);
    for k in 0..d {
        h.set(0, k, v[k] + params.type_video[k]);
        h.set(1, k, q[k] + params.type_text[k]);
    }
    let mut caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (next, cache) = layer.forward_cached(&h, &PAIR_MASK)?;
        caches.push(cache);
        h = next;
    }
    Ok((h.row(0).to_vec(), CrossCache { layers: caches }))
}

/// Backpropagates `dL/do` into the cross-encoder layers and type embeddings.
pub fn cross_encode_backward<T: Scalar>(
    cache: &CrossCache<T>,
    d_out: &[T],
    params: &CrossEncoderParams<T>,
    grad: &mut CrossEncoderParams<T>,
) -> Result<()> {
    let d = params.dim();
    let mut dh = Matrix::zeros(2, d);
    dh.row_mut(0).copy_from_slice(d_out);
    for (i, layer) in params.layers.iter().enumerate().rev() {
        dh = layer.backward(&cache.layers[i], &dh, &mut grad.layers[i])?;
    }
    for k in 0..d {
        grad.type_video[k] += dh.get(0, k);
        grad.type_text[k] += dh.get(1, k);
    }
    Ok(())
}

/// Anything that can score a (video, text) embedding pair for reranking.
pub trait PairScorer<T>: Sync {
    fn score_pair(&self, video: &[T], text: &[T]) -> Result<T>;
}

impl<T: Scalar> PairScorer<T> for CrossEncoderParams<T> {
    fn score_pair(&self, video: &[T], text: &[T]) -> Result<T> {
        let o = cross_encode(video, text, self)?;
        itm_score(&o, &self.itm)
    }
}

/// Scores with explicit presence flags; absent entries were never scored.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialScoreMatrix<T> {
    rows: usize,
    cols: usize,
    values: Vec<Option<T>>,
}

impl<T: Scalar> PartialScoreMatrix<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![None; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.values[i * self.cols + j] = Some(v);
    }

    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[Option<T>] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn present_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }
}

/// Fills every absent entry with the minimum present score of its row.
pub fn apply_miss_penalty<T: Scalar>(partial: &PartialScoreMatrix<T>) -> Result<ScoreMatrix<T>> {
    let mut out = Matrix::zeros(partial.rows, partial.cols);
    for i in 0..partial.rows {
        let row = partial.row(i);
        let floor = row
            .iter()
            .flatten()
            .copied()
            .reduce(T::min)
            .ok_or(Error::DegenerateRow { row: i })?;
        for (o, v) in out.row_mut(i).iter_mut().zip(row) {
            *o = v.unwrap_or(floor);
        }
    }
    Ok(out)
}

/// Per-row min-max scaling to `[0, 1]`; constant rows become 0.5.
pub fn normalize_rows<T: Scalar>(s: &ScoreMatrix<T>) -> ScoreMatrix<T> {
    let mut out = s.clone();
    let half = T::lit(0.5);
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let lo = row.iter().copied().fold(T::infinity(), T::min);
        let hi = row.iter().copied().fold(T::neg_infinity(), T::max);
        let range = hi - lo;
        if range > T::zero() {
            row.iter_mut().for_each(|x| *x = (*x - lo) / range);
        } else {
            row.iter_mut().for_each(|x| *x = half);
        }
    }
    out
}

/// `itm_norm + α · init_norm`.
pub fn fuse_scores<T: Scalar>(itm_norm: &ScoreMatrix<T>, init_norm: &ScoreMatrix<T>, alpha: f64) -> Result<ScoreMatrix<T>> {
    if itm_norm.shape() != init_norm.shape() {
        return Err(Error::dim(
            "fuse_scores",
            format!("{:?}", itm_norm.shape()),
            format!("{:?}", init_norm.shape()),
        ));
    }
    let a = T::lit(alpha);
    let data = itm_norm
        .as_slice()
        .iter()
        .zip(init_norm.as_slice())
        .map(|(&x, &y)| x + a * y)
        .collect();
    Matrix::new(itm_norm.rows(), itm_norm.cols(), data)
}

/// Which side of the score matrix holds the queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Rows are captions, columns clips.
    TextToVideo,
    /// Rows are clips, columns captions.
    VideoToText,
}

/// Full second stage: Top-K, pair scoring, miss penalty, normalization, fusion.
///
/// `s_init` is oriented per `direction`. The scorer always receives the clip
/// embedding first.
pub fn rerank<T: Scalar, S: PairScorer<T>>(
    s_init: &ScoreMatrix<T>,
    videos: &EmbeddingMatrix<T>,
    texts: &EmbeddingMatrix<T>,
    scorer: &S,
    k: usize,
    alpha: f64,
    direction: Direction,
) -> Result<ScoreMatrix<T>> {
    let (queries, items) = match direction {
        Direction::TextToVideo => (texts, videos),
        Direction::VideoToText => (videos, texts),
    };
    if s_init.shape() != (queries.len(), items.len()) {
        return Err(Error::dim(
            "rerank initial scores",
            format!("{}x{}", queries.len(), items.len()),
            format!("{:?}", s_init.shape()),
        ));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("rerank K must be >= 1".into()));
    }
    let candidates = top_k(s_init, k);
    let scored: Vec<Result<Vec<(usize, T)>>> = candidates
        .lists
        .par_iter()
        .enumerate()
        .map(|(i, list)| {
            list.iter()
                .map(|&j| {
                    let s = match direction {
                        Direction::TextToVideo => scorer.score_pair(videos.row(j), texts.row(i))?,
                        Direction::VideoToText => scorer.score_pair(videos.row(i), texts.row(j))?,
                    };
                    Ok((j, s))
                })
                .collect()
        })
        .collect();
    let mut partial = PartialScoreMatrix::new(s_init.rows(), s_init.cols());
    for (i, row) in scored.into_iter().enumerate() {
        for (j, s) in row? {
            partial.set(i, j, s);
        }
    }
    let itm = apply_miss_penalty(&partial)?;
    fuse_scores(&normalize_rows(&itm), &normalize_rows(s_init), alpha)
}

/// Matching-head training recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct ItmTrainConfig {
    pub steps: usize,
    /// Pairs per step, split evenly between positives and negatives.
    pub batch_size: usize,
    pub lr: f64,
    /// Pairs with relevance at or above this are positives.
    pub theta_pos: f64,
    /// Pairs with relevance at or below this are negatives.
    pub theta_neg: f64,
    /// Per caption and per clip, how many of its highest-scoring negatives
    /// (by cosine similarity of the given embeddings) form the hard pool.
    pub hard_negatives: usize,
    /// Share of each batch's negatives drawn from the hard pool.
    pub hard_fraction: f64,
    pub adamw: AdamWConfig,
    pub seed: u64,
}

impl Default for ItmTrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 64,
            lr: 1e-3,
            theta_pos: 0.5,
            theta_neg: 0.1,
            hard_negatives: 0,
            hard_fraction: 0.0,
            adamw: AdamWConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ItmTrainOutcome<T> {
    pub params: CrossEncoderParams<T>,
    /// Mean binary cross-entropy per step.
    pub losses: Vec<f64>,
}

/// `-log p(label)` for two-class logits, and its gradient wrt the logits.
fn binary_ce<T: Scalar>(z: [T; 2], label: bool) -> (T, [T; 2]) {
    let softplus = |x: T| x.max(T::zero()) + (-x.abs()).exp().ln_1p();
    let margin = z[1] - z[0];
    let loss = if label { softplus(-margin) } else { softplus(margin) };
    let p = softmax(&z).expect("two logits")[1];
    let y = if label { T::one() } else { T::zero() };
    (loss, [y - p, p - y])
}

/// Trains the cross-encoder and head with balanced binary cross-entropy over
/// (caption, clip) pairs: positives have relevance `>= theta_pos`, negatives
/// `<= theta_neg`. `relevance` rows are captions, columns clips.
pub fn train_itm<T: Scalar>(
    params: &CrossEncoderParams<T>,
    videos: &EmbeddingMatrix<T>,
    texts: &EmbeddingMatrix<T>,
    relevance: &RelevanceMatrix<T>,
    config: &ItmTrainConfig,
) -> Result<ItmTrainOutcome<T>> {
    if !(0.0 <= config.theta_neg && config.theta_neg < config.theta_pos && config.theta_pos <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 <= theta_neg < theta_pos <= 1 (got {} / {})",
            config.theta_neg, config.theta_pos
        )));
    }
    if relevance.shape() != (texts.len(), videos.len()) {
        return Err(Error::dim(
            "train_itm relevance",
            format!("{}x{}", texts.len(), videos.len()),
            format!("{:?}", relevance.shape()),
        ));
    }
    if config.batch_size < 2 {
        return Err(Error::InvalidParameter("ITM batch size must be >= 2".into()));
    }
    if !(0.0..=1.0).contains(&config.hard_fraction) {
        return Err(Error::InvalidParameter(format!(
            "hard negative fraction {} outside [0, 1]",
            config.hard_fraction
        )));
    }
    let (pos_t, neg_t) = (T::lit(config.theta_pos), T::lit(config.theta_neg));
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for i in 0..texts.len() {
        for j in 0..videos.len() {
            let r = relevance.get(i, j);
            if r >= pos_t {
                positives.push((i as u32, j as u32));
            } else if r <= neg_t {
                negatives.push((i as u32, j as u32));
            }
        }
    }
    if positives.is_empty() {
        return Err(Error::TrainingData("no positive pairs at the configured threshold".into()));
    }
    if negatives.is_empty() {
        return Err(Error::TrainingData("no negative pairs at the configured threshold".into()));
    }
    let hard = if config.hard_negatives > 0 && config.hard_fraction > 0.0 {
        hard_negative_pool(videos, texts, relevance, neg_t, config.hard_negatives)?
    } else {
        Vec::new()
    };

    let mut params = params.clone();
    let zero = params.zeros_like();
    let mut state = OptimizerState::new(config.adamw);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let half = config.batch_size / 2;
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut batch: Vec<(u32, u32, bool)> = Vec::with_capacity(2 * half);
        for _ in 0..half {
            let &(i, j) = positives.choose(&mut rng).unwrap();
            batch.push((i, j, true));
            let pool = if !hard.is_empty() && rng.gen_bool(config.hard_fraction) {
                &hard
            } else {
                &negatives
            };
            let &(i, j) = pool.choose(&mut rng).unwrap();
            batch.push((i, j, false));
        }
        let current = &params;
        let (mut grad, loss) = accumulate_gradients(&batch, &zero, |&(i, j, label), g| {
            let (o, cache) = cross_encode_cached(videos.row(j as usize), texts.row(i as usize), current)?;
            let z = current.itm.logits(&o)?;
            let (loss, dz) = binary_ce(z, label);
            let mut d_o = vec![T::zero(); o.len()];
            for c in 0..2 {
                g.itm.bias[c] += dz[c];
                for (gw, &ok) in g.itm.weight.row_mut(c).iter_mut().zip(&o) {
                    *gw += dz[c] * ok;
                }
                for (d, &w) in d_o.iter_mut().zip(current.itm.weight.row(c)) {
                    *d += dz[c] * w;
                }
            }
            cross_encode_backward(&cache, &d_o, current, g)?;
            Ok(loss)
        })?;
        let n = T::from_usize(batch.len()).unwrap();
        grad.scale_(n.recip());
        let mean_loss = (loss / n).to_f64_lossy();
        if !mean_loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss: mean_loss });
        }
        losses.push(mean_loss);
        let lr = cosine_lr(step, config.steps, config.lr);
        adamw_step(&mut params, &grad, &mut state, lr)?;
    }
    Ok(ItmTrainOutcome { params, losses })
}

/// The `per_query` most similar negatives of every caption and of every clip.
fn hard_negative_pool<T: Scalar>(
    videos: &EmbeddingMatrix<T>,
    texts: &EmbeddingMatrix<T>,
    relevance: &RelevanceMatrix<T>,
    neg_t: T,
    per_query: usize,
) -> Result<Vec<(u32, u32)>> {
    let s = crate::retrieval::similarity_matrix(videos, texts)?;
    let mut pool = Vec::new();
    for (i, row) in s.row_iter().enumerate() {
        let order = crate::retrieval::argsort_desc(row);
        let picked = order.into_iter().filter(|&j| relevance.get(i, j) <= neg_t).take(per_query);
        pool.extend(picked.map(|j| (i as u32, j as u32)));
    }
    let st = s.transpose();
    for (j, row) in st.row_iter().enumerate() {
        let order = crate::retrieval::argsort_desc(row);
        let picked = order.into_iter().filter(|&i| relevance.get(i, j) <= neg_t).take(per_query);
        pool.extend(picked.map(|i| (i as u32, j as u32)));
    }
    Ok(pool)
}

/// Fraction of pairs whose matching probability falls on the right side of 0.5.
pub fn itm_accuracy<T: Scalar>(
    params: &CrossEncoderParams<T>,
    pairs: &[(Vec<T>, Vec<T>, bool)],
) -> Result<f64> {
    let half = T::lit(0.5);
    let mut correct = 0usize;
    for (v, q, label) in pairs {
        let p = params.score_pair(v, q)?;
        if (p > half) == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len().max(1) as f64)
}
