//! Dual encoder: clips go through the visual projection and (optionally) the
//! temporal encoder, captions through a linear text projection. Both land in
//! the same `D`-dimensional space and are compared by cosine similarity.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::init::xavier_uniform;
use crate::numerics::Matrix;
use crate::objective::{sms_loss_and_grad, RelevanceMatrix, SmsConfig};
use crate::params::{accumulate_gradients, ParamGroup, ParamMut, ParamRef, ParamSet};
use crate::retrieval::{cosine_scores_backward, cosine_scores_cached, EmbeddingMatrix};
use crate::scalar::Scalar;
use crate::temporal::{
    encode_video_backward, encode_video_cached, encode_video_pooled, encode_video_pooled_backward, FrameSequence,
    TemporalEncoderParams, VideoCache,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Per-frame input feature size.
    pub frame_dim: usize,
    /// Per-caption input feature size.
    pub text_dim: usize,
    /// Shared embedding size.
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub t_max: usize,
    /// Without it clips are the masked mean of projected frames.
    pub temporal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoder<T> {
    /// `frame_dim × dim`
    pub visual_proj: Matrix<T>,
    /// `text_dim × dim`
    pub text_proj: Matrix<T>,
    pub temporal: Option<TemporalEncoderParams<T>>,
}

impl<T: Scalar> DualEncoder<T> {
    /// The projections are drawn from `rng` first, then the temporal encoder
    /// from `temporal_rng`, so toggling the temporal encoder leaves the
    /// projections unchanged.
    pub fn init<R: Rng + ?Sized, R2: Rng + ?Sized>(rng: &mut R, temporal_rng: &mut R2, dims: &ModelDims) -> Result<Self> {
        let visual_proj = xavier_uniform(rng, dims.frame_dim, dims.dim);
        let text_proj = xavier_uniform(rng, dims.text_dim, dims.dim);
        let temporal = if dims.temporal {
            Some(TemporalEncoderParams::init(temporal_rng, dims.dim, dims.heads, dims.layers, dims.t_max)?)
        } else {
            None
        };
        Ok(Self {
            visual_proj,
            text_proj,
            temporal,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero_();
        z
    }

    pub fn dim(&self) -> usize {
        self.visual_proj.cols()
    }

    pub fn frame_dim(&self) -> usize {
        self.visual_proj.rows()
    }

    pub fn text_dim(&self) -> usize {
        self.text_proj.rows()
    }

    /// Clips longer than the positional table are subsampled uniformly.
    fn fit(&self, seq: &FrameSequence<T>) -> FrameSequence<T> {
        match &self.temporal {
            Some(t) if seq.len() > t.t_max() => seq.sample_uniform(t.t_max()),
            _ => seq.clone(),
        }
    }

    pub fn encode_video(&self, seq: &FrameSequence<T>) -> Result<Vec<T>> {
        let seq = self.fit(seq);
        match &self.temporal {
            Some(t) => Ok(encode_video_cached(&seq, &self.visual_proj, t)?.0),
            None => encode_video_pooled(&seq, &self.visual_proj),
        }
    }

    pub fn encode_text(&self, feat: &[T]) -> Result<Vec<T>> {
        crate::retrieval::encode_text(feat, &self.text_proj)
    }

    pub fn encode_videos(&self, clips: &[FrameSequence<T>], ids: Vec<String>) -> Result<EmbeddingMatrix<T>> {
        let rows = clips
            .par_iter()
            .map(|c| self.encode_video(c))
            .collect::<Result<Vec<_>>>()?;
        EmbeddingMatrix::new(ids, stack(rows, self.dim())?)
    }

    pub fn encode_texts(&self, feats: &Matrix<T>, ids: Vec<String>) -> Result<EmbeddingMatrix<T>> {
        if feats.cols() != self.text_dim() {
            return Err(Error::dim("caption features", self.text_dim(), feats.cols()));
        }
        EmbeddingMatrix::new(ids, feats.matmul(&self.text_proj)?)
    }

    /// SMS loss of one batch of paired captions and clips, with its gradient.
    /// `relevance` rows are the batch captions, columns the batch clips.
    pub fn batch_loss_and_grad(
        &self,
        clips: &[&FrameSequence<T>],
        text_feats: &Matrix<T>,
        relevance: &RelevanceMatrix<T>,
        sms: &SmsConfig,
    ) -> Result<(T, Self)> {
        let b = clips.len();
        if text_feats.rows() != b || relevance.shape() != (b, b) {
            return Err(Error::dim(
                "training batch",
                format!("{b} captions, {b}x{b} relevance"),
                format!("{} captions, {:?} relevance", text_feats.rows(), relevance.shape()),
            ));
        }
        let fitted: Vec<FrameSequence<T>> = clips.iter().map(|c| self.fit(c)).collect();
        let forward: Vec<(Vec<T>, Option<VideoCache<T>>)> = fitted
            .par_iter()
            .map(|seq| match &self.temporal {
                Some(t) => encode_video_cached(seq, &self.visual_proj, t).map(|(v, c)| (v, Some(c))),
                None => encode_video_pooled(seq, &self.visual_proj).map(|v| (v, None)),
            })
            .collect::<Result<_>>()?;
        let mut videos = Matrix::zeros(b, self.dim());
        for (i, (v, _)) in forward.iter().enumerate() {
            videos.row_mut(i).copy_from_slice(v);
        }
        let texts = text_feats.matmul(&self.text_proj)?;

        let (scores, cos_cache) = cosine_scores_cached(&texts, &videos)?;
        let (loss, d_scores) = sms_loss_and_grad(&scores, relevance, sms)?;
        let (d_texts, d_videos) = cosine_scores_backward(&cos_cache, &d_scores)?;

        let indices: Vec<usize> = (0..b).collect();
        let zero = self.zeros_like();
        let (mut grad, _) = accumulate_gradients(&indices, &zero, |&i, g: &mut Self| {
            match (&self.temporal, &forward[i].1, g.temporal.as_mut()) {
                (Some(t), Some(cache), Some(gt)) => {
                    encode_video_backward(cache, d_videos.row(i), t, &mut g.visual_proj, gt)?
                }
                _ => encode_video_pooled_backward(&fitted[i], d_videos.row(i), &mut g.visual_proj)?,
            }
            Ok(T::zero())
        })?;
        grad.text_proj.add_assign(&text_feats.t_matmul(&d_texts)?)?;
        Ok((loss, grad))
    }
}

fn stack<T: Scalar>(rows: Vec<Vec<T>>, dim: usize) -> Result<Matrix<T>> {
    let n = rows.len();
    Matrix::new(n, dim, rows.into_iter().flatten().collect())
}

impl<T: Scalar> ParamSet<T> for DualEncoder<T> {
    fn visit<'a>(&'a self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamRef<'a, T>>) {
        self.visual_proj.visit(&crate::params::join(prefix, "visual_proj"), group, out);
        self.text_proj.visit(&crate::params::join(prefix, "text_proj"), group, out);
        if let Some(t) = &self.temporal {
            t.visit(&crate::params::join(prefix, "temporal"), ParamGroup::Temporal, out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamMut<'a, T>>) {
        self.visual_proj.visit_mut(&crate::params::join(prefix, "visual_proj"), group, out);
        self.text_proj.visit_mut(&crate::params::join(prefix, "text_proj"), group, out);
        if let Some(t) = &mut self.temporal {
            t.visit_mut(&crate::params::join(prefix, "temporal"), ParamGroup::Temporal, out);
        }
    }
}
