use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::eval::{evaluate, evaluate_directional, MetricsReport};
use crate::model::DualEncoder;
use crate::pipeline::config::RunConfig;
use crate::pipeline::dataset::{DatasetBundle, Split};
use crate::pipeline::{run_train, Checkpoint};
use crate::rerank::{rerank, CrossEncoderParams, Direction};
use crate::retrieval::{similarity_matrix, EmbeddingMatrix, ScoreMatrix};
use crate::scalar::Scalar;

/// Embeddings of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded<T> {
    pub videos: EmbeddingMatrix<T>,
    pub texts: EmbeddingMatrix<T>,
}

impl<T: Scalar> Encoded<T> {
    pub fn normalized(&self) -> Result<Self> {
        Ok(Self {
            videos: self.videos.normalized()?,
            texts: self.texts.normalized()?,
        })
    }

    /// Text-to-video cosine scores: rows captions, columns clips.
    pub fn scores(&self) -> Result<ScoreMatrix<T>> {
        similarity_matrix(&self.videos, &self.texts)
    }
}

pub fn encode_split<T: Scalar>(model: &DualEncoder<T>, split: &Split<'_, T>) -> Result<Encoded<T>> {
    Ok(Encoded {
        videos: model.encode_videos(split.clips, split.clip_ids.to_vec())?,
        texts: model.encode_texts(&split.captions, split.caption_ids.to_vec())?,
    })
}

/// Reranks the text-to-video matrix and, independently, its transpose.
/// Returns `(t2v, v2t)`.
pub fn rerank_both<T: Scalar>(
    s_t2v: &ScoreMatrix<T>,
    encoded: &Encoded<T>,
    cross: &CrossEncoderParams<T>,
    k: usize,
    alpha: f64,
) -> Result<(ScoreMatrix<T>, ScoreMatrix<T>)> {
    let unit = encoded.normalized()?;
    let t2v = rerank(s_t2v, &unit.videos, &unit.texts, cross, k, alpha, Direction::TextToVideo)?;
    let v2t = rerank(&s_t2v.transpose(), &unit.videos, &unit.texts, cross, k, alpha, Direction::VideoToText)?;
    Ok((t2v, v2t))
}

pub fn check_compatible<T: Scalar>(ckpt: &Checkpoint<T>, data: &DatasetBundle<T>) -> Result<()> {
    let (d, c) = (&ckpt.dims, &data.config);
    if d.frame_dim != c.frame_dim || d.text_dim != c.text_dim {
        return Err(Error::dim(
            "checkpoint input sizes",
            format!("frame {} / text {}", c.frame_dim, c.text_dim),
            format!("frame {} / text {}", d.frame_dim, d.text_dim),
        ));
    }
    Ok(())
}

/// Encodes the evaluation split, scores it, optionally reranks both
/// directions and evaluates.
pub fn run_eval<T: Scalar>(cfg: &RunConfig, data: &DatasetBundle<T>, ckpt: &Checkpoint<T>) -> Result<MetricsReport> {
    check_compatible(ckpt, data)?;
    let split = data.eval_split();
    let encoded = encode_split(&ckpt.encoder, &split)?;
    let s = encoded.scores()?;
    if !cfg.rerank.enabled {
        return evaluate(&s, &split.relevance);
    }
    let cross = ckpt
        .cross
        .as_ref()
        .ok_or_else(|| Error::Config("checkpoint has no reranker; disable reranking to evaluate it".into()))?;
    let (t2v, v2t) = rerank_both(&s, &encoded, cross, cfg.rerank.k, cfg.rerank.alpha)?;
    evaluate_directional(&t2v, &v2t, &split.relevance)
}

pub const ABLATION_ROWS: [&str; 4] = ["full", "wo_rerank", "wo_temporal", "wo_temporal_rerank"];

/// One report per ablation setting, in [`ABLATION_ROWS`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<(String, MetricsReport)>,
}

impl AblationTable {
    pub fn get(&self, name: &str) -> Option<&MetricsReport> {
        self.rows.iter().find(|(n, _)| n == name).map(|(_, r)| r)
    }

    /// Percentages, two decimals.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<20}{:>9}{:>9}{:>9}{:>10}{:>10}{:>10}\n",
            "config", "mAP-avg", "mAP-t2v", "mAP-v2t", "nDCG-avg", "nDCG-t2v", "nDCG-v2t"
        );
        for (name, r) in &self.rows {
            writeln!(
                out,
                "{:<20}{:>9.2}{:>9.2}{:>9.2}{:>10.2}{:>10.2}{:>10.2}",
                name,
                100.0 * r.map_avg,
                100.0 * r.map_t2v,
                100.0 * r.map_v2t,
                100.0 * r.ndcg_avg,
                100.0 * r.ndcg_t2v,
                100.0 * r.ndcg_v2t
            )
            .unwrap();
        }
        out
    }

    pub fn to_records(&self) -> String {
        self.rows.iter().map(|(name, r)| r.to_records(name)).collect()
    }
}

/// Trains with and without the temporal encoder under one seed and evaluates
/// each with and without reranking. Encoder training does not depend on the
/// reranker, so the rows without reranking reuse the same trained encoders.
pub fn ablation_run<T: Scalar>(cfg: &RunConfig, data: &DatasetBundle<T>) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(4);
    for temporal in [true, false] {
        let mut c = cfg.clone();
        c.model.temporal = temporal;
        c.rerank.enabled = true;
        let trained = run_train(&c, data)?;
        let with = run_eval(&c, data, &trained.checkpoint)?;
        c.rerank.enabled = false;
        let without = run_eval(&c, data, &trained.checkpoint)?;
        let (a, b) = if temporal { (0, 1) } else { (2, 3) };
        rows.push((ABLATION_ROWS[a].to_string(), with));
        rows.push((ABLATION_ROWS[b].to_string(), without));
    }
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::generate_synthetic;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::desk();
        c.data.n_clips = 40;
        c.data.n_actions = 8;
        c.data.n_groups = 2;
        c.data.frame_dim = 8;
        c.data.text_dim = 8;
        c.data.eval_fraction = 0.25;
        c.model.dim = 8;
        c.model.heads = 2;
        c.model.layers = 1;
        c.optim.batch_size = 8;
        c.optim.steps = 4;
        c.rerank.steps = 2;
        c.rerank.batch_size = 8;
        c.rerank.k = 3;
        c
    }

    #[test]
    fn rerank_disabled_equals_raw_scores() {
        let mut cfg = tiny();
        let (data, _) = generate_synthetic::<f32>(&cfg.data, 1).unwrap();
        let ck = run_train(&cfg, &data).unwrap().checkpoint;
        cfg.rerank.enabled = false;
        let rep = run_eval(&cfg, &data, &ck).unwrap();
        let split = data.eval_split();
        let s = encode_split(&ck.encoder, &split).unwrap().scores().unwrap();
        assert_eq!(rep, evaluate(&s, &split.relevance).unwrap());
    }

    #[test]
    fn missing_reranker_and_mismatched_dims() {
        let mut cfg = tiny();
        cfg.rerank.enabled = false;
        let (data, _) = generate_synthetic::<f32>(&cfg.data, 2).unwrap();
        let ck = run_train(&cfg, &data).unwrap().checkpoint;
        cfg.rerank.enabled = true;
        assert!(matches!(run_eval(&cfg, &data, &ck), Err(Error::Config(_))));
        let mut other = cfg.data.clone();
        other.frame_dim = 5;
        let (wrong, _) = generate_synthetic::<f32>(&other, 2).unwrap();
        assert!(matches!(run_eval(&cfg, &wrong, &ck), Err(Error::Dimension { .. })));
    }

    #[test]
    fn ablation_table_shape_and_determinism() {
        let cfg = tiny();
        let (data, _) = generate_synthetic::<f32>(&cfg.data, 3).unwrap();
        let a = ablation_run(&cfg, &data).unwrap();
        let b = ablation_run(&cfg, &data).unwrap();
        assert_eq!(a, b);
        let names: Vec<&str> = a.rows.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ABLATION_ROWS);
        assert_eq!(a.to_text().lines().count(), 5);
        assert_eq!(a.to_records().lines().count(), 24);
    }
}
