//! Shared embedding space: text projection, cosine similarity, Top-K selection.

use std::cmp::Ordering;
use std::collections::HashSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};
use crate::scalar::Scalar;

/// Query-by-item score matrix (rows are queries).
pub type ScoreMatrix<T> = Matrix<T>;

/// `n × D` embeddings with stable external identifiers, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T> {
    ids: Vec<String>,
    data: Matrix<T>,
}

impl<T: Scalar> EmbeddingMatrix<T> {
    pub fn new(ids: Vec<String>, data: Matrix<T>) -> Result<Self> {
        if ids.len() != data.rows() {
            return Err(Error::dim("EmbeddingMatrix ids", data.rows(), ids.len()));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidParameter(format!("duplicate embedding id '{id}'")));
            }
        }
        if !data.is_finite() {
            return Err(Error::InvalidParameter("embeddings must be finite".into()));
        }
        Ok(Self { ids, data })
    }

    /// Uses the row index as the identifier.
    pub fn with_index_ids(data: Matrix<T>) -> Result<Self> {
        let ids = (0..data.rows()).map(|i| i.to_string()).collect();
        Self::new(ids, data)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &Matrix<T> {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.data.row(i)
    }

    /// Rows scaled to unit L2 norm.
    pub fn normalized(&self) -> Result<Self> {
        let (data, _) = l2_normalize_rows(&self.data, &self.ids)?;
        Ok(Self {
            ids: self.ids.clone(),
            data,
        })
    }
}

/// `s = text_feat · W_txt`.
pub fn encode_text<T: Scalar>(text_feat: &[T], w_txt: &Matrix<T>) -> Result<Vec<T>> {
    if text_feat.len() != w_txt.rows() {
        return Err(Error::dim("encode_text", w_txt.rows(), text_feat.len()));
    }
    w_txt.vecmat(text_feat)
}

/// Returns the row-normalized matrix and the original row norms.
pub fn l2_normalize_rows<T: Scalar>(m: &Matrix<T>, ids: &[String]) -> Result<(Matrix<T>, Vec<T>)> {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let n = dot(m.row(i), m.row(i)).sqrt();
        if !(n > T::zero()) || !n.is_finite() {
            let id = ids.get(i).cloned().unwrap_or_else(|| i.to_string());
            return Err(Error::ZeroNorm { id });
        }
        out.row_mut(i).iter_mut().for_each(|x| *x /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// `S[i][j] = cos(text_i, video_j)`.
pub fn similarity_matrix<T: Scalar>(videos: &EmbeddingMatrix<T>, texts: &EmbeddingMatrix<T>) -> Result<ScoreMatrix<T>> {
    if videos.dim() != texts.dim() {
        return Err(Error::dim("similarity_matrix", videos.dim(), texts.dim()));
    }
    let (v, _) = l2_normalize_rows(videos.data(), videos.ids())?;
    let (t, _) = l2_normalize_rows(texts.data(), texts.ids())?;
    let mut s = t.matmul_t(&v)?;
    // rounding can push |cos| a hair past 1
    s.as_mut_slice()
        .iter_mut()
        .for_each(|x| *x = x.max(-T::one()).min(T::one()));
    Ok(s)
}

/// Cosine similarity of raw row embeddings, keeping what the backward pass needs.
pub struct CosineCache<T> {
    text_unit: Matrix<T>,
    text_norms: Vec<T>,
    video_unit: Matrix<T>,
    video_norms: Vec<T>,
}

pub fn cosine_scores_cached<T: Scalar>(texts: &Matrix<T>, videos: &Matrix<T>) -> Result<(ScoreMatrix<T>, CosineCache<T>)> {
    if texts.cols() != videos.cols() {
        return Err(Error::dim("cosine_scores", videos.cols(), texts.cols()));
    }
    let (text_unit, text_norms) = l2_normalize_rows(texts, &[])?;
    let (video_unit, video_norms) = l2_normalize_rows(videos, &[])?;
    let s = text_unit.matmul_t(&video_unit)?;
    Ok((
        s,
        CosineCache {
            text_unit,
            text_norms,
            video_unit,
            video_norms,
        },
    ))
}

/// Maps `dL/dS` onto the raw text and video embeddings.
pub fn cosine_scores_backward<T: Scalar>(cache: &CosineCache<T>, ds: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    let d_text_unit = ds.matmul(&cache.video_unit)?;
    let d_video_unit = ds.t_matmul(&cache.text_unit)?;
    Ok((
        unit_backward(&cache.text_unit, &cache.text_norms, &d_text_unit),
        unit_backward(&cache.video_unit, &cache.video_norms, &d_video_unit),
    ))
}

/// Backward of `u = x / |x|`: `(g - (g·u) u) / |x|`.
fn unit_backward<T: Scalar>(unit: &Matrix<T>, norms: &[T], d_unit: &Matrix<T>) -> Matrix<T> {
    let mut out = d_unit.clone();
    for i in 0..unit.rows() {
        let u = unit.row(i);
        let proj = dot(d_unit.row(i), u);
        let n = norms[i];
        for (o, &uk) in out.row_mut(i).iter_mut().zip(u) {
            *o = (*o - proj * uk) / n;
        }
    }
    out
}

/// Descending score, then ascending index.
#[inline]
pub fn rank_order<T: Scalar>(scores: &[T], a: usize, b: usize) -> Ordering {
    scores[b]
        .partial_cmp(&scores[a])
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

/// Full ranking of one row under [`rank_order`].
pub fn argsort_desc<T: Scalar>(scores: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| rank_order(scores, a, b));
    idx
}

/// Per-query candidate lists of length `min(K, N_v)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub k: usize,
    pub lists: Vec<Vec<usize>>,
}

impl CandidateSet {
    pub fn total(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }
}

/// Top-`k` columns per row by descending score (ties to the lower index).
/// `k` is clamped to the row length.
pub fn top_k<T: Scalar>(scores: &ScoreMatrix<T>, k: usize) -> CandidateSet {
    let k = k.max(1);
    let keep = k.min(scores.cols());
    let lists = (0..scores.rows())
        .into_par_iter()
        .map(|i| top_k_row(scores.row(i), keep))
        .collect();
    CandidateSet { k, lists }
}

fn top_k_row<T: Scalar>(row: &[T], keep: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    if keep == 0 {
        return Vec::new();
    }
    if keep < idx.len() {
        idx.select_nth_unstable_by(keep - 1, |&a, &b| rank_order(row, a, b));
        idx.truncate(keep);
    }
    idx.sort_unstable_by(|&a, &b| rank_order(row, a, b));
    idx
}
