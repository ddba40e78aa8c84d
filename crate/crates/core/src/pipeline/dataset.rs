//! Synthetic order-sensitive retrieval data.
//!
//! A class is an ordered sequence of `S` action steps. Classes come in groups
//! that share one step set: each group contributes its `S` cyclic orderings,
//! so classes in a group differ only in order. A clip shows its class's steps
//! in order, `frames / S` frames per step, each frame being the step's
//! prototype plus noise. A caption is a position-aware composition of its
//! class's steps plus noise. Relevance between a caption and a clip is the
//! fraction of positions at which their classes perform the same step.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{
    load_embeddings, load_relevance, read_file, save_embeddings, save_relevance, write_file,
};
use crate::numerics::Matrix;
use crate::objective::RelevanceMatrix;
use crate::pipeline::config::DataConfig;
use crate::pipeline::stream_rng;
use crate::retrieval::EmbeddingMatrix;
use crate::scalar::Scalar;
use crate::temporal::FrameSequence;

const DATA_STREAM: u64 = 0;

pub const META_FILE: &str = "dataset.toml";
pub const CLIPS_FILE: &str = "clips.bin";
pub const MASK_FILE: &str = "clip_mask.bin";
pub const CAPTIONS_FILE: &str = "captions.bin";
pub const RELEVANCE_FILE: &str = "relevance.bin";

fn unit_rows<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix<f64> {
    let mut m = Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    for i in 0..rows {
        let n = crate::numerics::norm(m.row(i));
        m.row_mut(i).iter_mut().for_each(|x| *x /= n);
    }
    m
}

fn add_noise<R: Rng + ?Sized>(rng: &mut R, v: &mut [f64], level: f64) {
    let sigma = level / (v.len() as f64).sqrt();
    for x in v {
        let z: f64 = StandardNormal.sample(rng);
        *x += sigma * z;
    }
}

/// The latent structure behind a synthetic dataset.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    config: DataConfig,
    /// `n_actions × frame_dim`, unit rows.
    step_protos: Matrix<f64>,
    /// One `n_actions × text_dim` table per position, unit rows.
    word_protos: Vec<Matrix<f64>>,
    /// Step sequence of each class.
    classes: Vec<Vec<usize>>,
}

impl SyntheticWorld {
    pub fn new<R: Rng + ?Sized>(config: &DataConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let s = config.steps_per_class;
        let step_protos = unit_rows(rng, config.n_actions, config.frame_dim);
        let word_protos = (0..s).map(|_| unit_rows(rng, config.n_actions, config.text_dim)).collect();
        let mut classes = Vec::with_capacity(config.n_classes());
        for _ in 0..config.n_groups {
            let steps = sample(rng, config.n_actions, s).into_vec();
            for shift in 0..s {
                classes.push((0..s).map(|p| steps[(p + shift) % s]).collect());
            }
        }
        Ok(Self {
            config: config.clone(),
            step_protos,
            word_protos,
            classes,
        })
    }

    pub fn config(&self) -> &DataConfig {
        &self.config
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_steps(&self, class: usize) -> &[usize] {
        &self.classes[class]
    }

    /// Class of clip (and caption) `i`.
    pub fn class_of(&self, i: usize) -> usize {
        i % self.classes.len()
    }

    /// Step shown in frame `t`.
    pub fn frame_step(&self, class: usize, t: usize) -> usize {
        let s = self.config.steps_per_class;
        self.classes[class][t * s / self.config.frames]
    }

    pub fn relevance_between(&self, a: usize, b: usize) -> f64 {
        let same = self.classes[a]
            .iter()
            .zip(&self.classes[b])
            .filter(|(x, y)| x == y)
            .count();
        same as f64 / self.config.steps_per_class as f64
    }

    /// Pairs of distinct classes built from the same steps in a different order.
    pub fn reordered_pairs(&self) -> Vec<(usize, usize)> {
        let s = self.config.steps_per_class;
        let mut out = Vec::new();
        for g in 0..self.config.n_groups {
            for a in 0..s {
                for b in a + 1..s {
                    out.push((g * s + a, g * s + b));
                }
            }
        }
        out
    }

    fn clip_features(&self, class: usize) -> Matrix<f64> {
        Matrix::from_fn(self.config.frames, self.config.frame_dim, |t, k| {
            self.step_protos.get(self.frame_step(class, t), k)
        })
    }

    fn caption_features(&self, class: usize) -> Vec<f64> {
        let scale = 1.0 / (self.config.steps_per_class as f64).sqrt();
        let mut v = vec![0.0; self.config.text_dim];
        for (p, &step) in self.classes[class].iter().enumerate() {
            crate::numerics::axpy(&mut v, scale, self.word_protos[p].row(step));
        }
        v
    }

    /// Noise-free clip of a class.
    pub fn template_clip<T: Scalar>(&self, class: usize) -> FrameSequence<T> {
        FrameSequence::full(self.clip_features(class).cast()).expect("template clip is valid")
    }

    /// Noise-free caption features of a class.
    pub fn template_caption<T: Scalar>(&self, class: usize) -> Vec<T> {
        self.caption_features(class).into_iter().map(T::lit).collect()
    }
}

/// Everything a run reads: clips, captions, relevance, ids and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle<T> {
    pub config: DataConfig,
    pub seed: u64,
    pub clip_ids: Vec<String>,
    pub clips: Vec<FrameSequence<T>>,
    pub caption_ids: Vec<String>,
    /// One row per caption.
    pub captions: Matrix<T>,
    /// Rows captions, columns clips.
    pub relevance: RelevanceMatrix<T>,
}

/// A contiguous range of paired captions and clips.
#[derive(Debug, Clone)]
pub struct Split<'a, T> {
    pub clip_ids: &'a [String],
    pub clips: &'a [FrameSequence<T>],
    pub caption_ids: &'a [String],
    pub captions: Matrix<T>,
    pub relevance: RelevanceMatrix<T>,
}

impl<T> Split<'_, T> {
    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

/// Builds the dataset for `(config, seed)`; the same pair always yields the
/// same bundle.
pub fn generate_synthetic<T: Scalar>(config: &DataConfig, seed: u64) -> Result<(DatasetBundle<T>, SyntheticWorld)> {
    let mut rng = stream_rng(seed, DATA_STREAM);
    let world = SyntheticWorld::new(config, &mut rng)?;
    let n = config.n_clips;
    let mut clips = Vec::with_capacity(n);
    for i in 0..n {
        let mut f = world.clip_features(world.class_of(i));
        for t in 0..config.frames {
            add_noise(&mut rng, f.row_mut(t), config.frame_noise);
        }
        clips.push(FrameSequence::full(f.cast())?);
    }
    let mut captions = Matrix::zeros(n, config.text_dim);
    for i in 0..n {
        let mut c = world.caption_features(world.class_of(i));
        add_noise(&mut rng, &mut c, config.text_noise);
        for (o, x) in captions.row_mut(i).iter_mut().zip(c) {
            *o = T::lit(x);
        }
    }
    let relevance = RelevanceMatrix::new(Matrix::from_fn(n, n, |i, j| {
        T::lit(world.relevance_between(world.class_of(i), world.class_of(j)))
    }))?;
    let bundle = DatasetBundle {
        config: config.clone(),
        seed,
        clip_ids: (0..n).map(|i| format!("clip_{i:05}")).collect(),
        clips,
        caption_ids: (0..n).map(|i| format!("caption_{i:05}")).collect(),
        captions,
        relevance,
    };
    Ok((bundle, world))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    seed: u64,
    data: DataConfig,
}

impl<T: Scalar> DatasetBundle<T> {
    pub fn n_train(&self) -> usize {
        self.config.n_train()
    }

    fn split(&self, lo: usize, hi: usize) -> Split<'_, T> {
        let idx: Vec<usize> = (lo..hi).collect();
        Split {
            clip_ids: &self.clip_ids[lo..hi],
            clips: &self.clips[lo..hi],
            caption_ids: &self.caption_ids[lo..hi],
            captions: self.captions.select_rows(&idx),
            relevance: self.relevance.submatrix(&idx, &idx),
        }
    }

    pub fn train_split(&self) -> Split<'_, T> {
        self.split(0, self.n_train())
    }

    pub fn eval_split(&self) -> Split<'_, T> {
        self.split(self.n_train(), self.clips.len())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let c = &self.config;
        let meta = Meta {
            seed: self.seed,
            data: c.clone(),
        };
        write_file(&dir.join(META_FILE), toml::to_string(&meta).expect("meta serializes").as_bytes())?;
        let mut frames = Matrix::zeros(self.clips.len(), c.frames * c.frame_dim);
        let mut mask = Matrix::zeros(self.clips.len(), c.frames);
        for (i, clip) in self.clips.iter().enumerate() {
            frames.row_mut(i).copy_from_slice(clip.features().as_slice());
            for (m, &valid) in mask.row_mut(i).iter_mut().zip(clip.mask()) {
                *m = if valid { T::one() } else { T::zero() };
            }
        }
        save_embeddings(&dir.join(CLIPS_FILE), &EmbeddingMatrix::new(self.clip_ids.clone(), frames)?)?;
        save_embeddings(&dir.join(MASK_FILE), &EmbeddingMatrix::new(self.clip_ids.clone(), mask)?)?;
        save_embeddings(
            &dir.join(CAPTIONS_FILE),
            &EmbeddingMatrix::new(self.caption_ids.clone(), self.captions.clone())?,
        )?;
        save_relevance(&dir.join(RELEVANCE_FILE), &self.relevance)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let text = String::from_utf8(read_file(&meta_path)?).map_err(|_| Error::Malformed {
            path: meta_path.clone(),
            reason: "not UTF-8".into(),
        })?;
        let meta: Meta = toml::from_str(&text).map_err(|e| Error::Malformed {
            path: meta_path.clone(),
            reason: e.to_string(),
        })?;
        let c = meta.data;
        c.validate()?;
        let frames: EmbeddingMatrix<T> = load_embeddings(&dir.join(CLIPS_FILE))?;
        let mask: EmbeddingMatrix<T> = load_embeddings(&dir.join(MASK_FILE))?;
        let captions: EmbeddingMatrix<T> = load_embeddings(&dir.join(CAPTIONS_FILE))?;
        let relevance = load_relevance(&dir.join(RELEVANCE_FILE))?;

        let n = c.n_clips;
        if frames.data().shape() != (n, c.frames * c.frame_dim) {
            return Err(Error::dim("clip features", format!("{n}x{}", c.frames * c.frame_dim), format!("{:?}", frames.data().shape())));
        }
        if mask.data().shape() != (n, c.frames) || mask.ids() != frames.ids() {
            return Err(Error::dim("clip mask", format!("{n}x{} with clip ids", c.frames), format!("{:?}", mask.data().shape())));
        }
        if captions.data().shape() != (n, c.text_dim) {
            return Err(Error::dim("captions", format!("{n}x{}", c.text_dim), format!("{:?}", captions.data().shape())));
        }
        if relevance.shape() != (n, n) {
            return Err(Error::dim("relevance", format!("{n}x{n}"), format!("{:?}", relevance.shape())));
        }
        let mut clips = Vec::with_capacity(n);
        for i in 0..n {
            let f = Matrix::new(c.frames, c.frame_dim, frames.row(i).to_vec())?;
            let m = mask
                .row(i)
                .iter()
                .map(|&x| match x {
                    x if x == T::one() => Ok(true),
                    x if x == T::zero() => Ok(false),
                    _ => Err(Error::Malformed {
                        path: dir.join(MASK_FILE),
                        reason: format!("mask value {x} is not 0 or 1"),
                    }),
                })
                .collect::<Result<Vec<bool>>>()?;
            clips.push(FrameSequence::new(f, m)?);
        }
        Ok(Self {
            config: c,
            seed: meta.seed,
            clip_ids: frames.ids().to_vec(),
            clips,
            caption_ids: captions.ids().to_vec(),
            captions: captions.data().clone(),
            relevance,
        })
    }
}
