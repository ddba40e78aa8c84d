use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::{DualEncoder, ModelDims};
use crate::objective::{adamw_step, cosine_lr, OptimizerState};
use crate::params::ParamSet;
use crate::pipeline::config::RunConfig;
use crate::pipeline::dataset::DatasetBundle;
use crate::pipeline::run::encode_split;
use crate::pipeline::{stream_rng, Checkpoint};
use crate::rerank::{train_itm, CrossEncoderParams};
use crate::scalar::Scalar;
use crate::temporal::FrameSequence;

const PROJ_STREAM: u64 = 1;
const TEMPORAL_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;
const CROSS_STREAM: u64 = 4;

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    /// SMS loss per step.
    pub losses: Vec<f64>,
    /// Matching-head loss per step; empty when reranking is disabled.
    pub itm_losses: Vec<f64>,
}

pub fn model_dims(cfg: &RunConfig, data: &crate::pipeline::config::DataConfig) -> ModelDims {
    ModelDims {
        frame_dim: data.frame_dim,
        text_dim: data.text_dim,
        ..cfg.dims()
    }
}

/// Parameters before any training step.
pub fn init_checkpoint<T: Scalar>(cfg: &RunConfig, dims: ModelDims) -> Result<Checkpoint<T>> {
    let encoder = DualEncoder::init(
        &mut stream_rng(cfg.seed, PROJ_STREAM),
        &mut stream_rng(cfg.seed, TEMPORAL_STREAM),
        &dims,
    )?;
    let cross = if cfg.rerank.enabled {
        Some(CrossEncoderParams::init(
            &mut stream_rng(cfg.seed, CROSS_STREAM),
            dims.dim,
            dims.heads,
            cfg.rerank.layers,
        )?)
    } else {
        None
    };
    Ok(Checkpoint { dims, encoder, cross })
}

/// SMS training of the dual encoder on the training split (shuffled epochs,
/// incomplete batches dropped, cosine schedule), then matching-head training
/// of the reranker on the trained embeddings.
pub fn run_train<T: Scalar>(cfg: &RunConfig, data: &DatasetBundle<T>) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let dims = model_dims(cfg, &data.config);
    let mut ckpt = init_checkpoint::<T>(cfg, dims)?;
    let train = data.train_split();
    let b = cfg.optim.batch_size;
    let steps = cfg.optim.steps;
    if steps > 0 && train.len() < b {
        return Err(Error::TrainingData(format!(
            "{} training pairs cannot fill one batch of {b}",
            train.len()
        )));
    }

    let sms = cfg.sms();
    let mut state = OptimizerState::new(cfg.optim.adamw());
    let mut rng = stream_rng(cfg.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = usize::MAX;
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        if cursor.saturating_add(b) > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let batch = &order[cursor..cursor + b];
        cursor += b;
        let clips: Vec<&FrameSequence<T>> = batch.iter().map(|&i| &train.clips[i]).collect();
        let texts = train.captions.select_rows(batch);
        let rel = train.relevance.submatrix(batch, batch);
        let (loss, grad) = ckpt.encoder.batch_loss_and_grad(&clips, &texts, &rel, &sms)?;
        let loss = loss.to_f64_lossy();
        if !loss.is_finite() || !grad.is_finite() {
            log::error!("non-finite loss {loss} at step {step}; batch starts with {}", train.clip_ids[batch[0]]);
            return Err(Error::NonFiniteLoss { step, loss });
        }
        let lr = cosine_lr(step, steps, cfg.optim.lr);
        adamw_step(&mut ckpt.encoder, &grad, &mut state, lr)?;
        log::debug!("step {step} loss {loss:.6} lr {lr:.3e}");
        if step % 50 == 0 || step + 1 == steps {
            log::info!("encoder step {step}/{steps} loss {loss:.6}");
        }
        losses.push(loss);
    }

    let mut itm_losses = Vec::new();
    if let Some(cross) = &ckpt.cross {
        let enc = encode_split(&ckpt.encoder, &train)?.normalized()?;
        let out = train_itm(cross, &enc.videos, &enc.texts, &train.relevance, &cfg.itm())?;
        if let Some(last) = out.losses.last() {
            log::info!("reranker trained for {} steps, final loss {last:.6}", out.losses.len());
        }
        ckpt.cross = Some(out.params);
        itm_losses = out.losses;
    }
    Ok(TrainOutcome {
        checkpoint: ckpt,
        losses,
        itm_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::generate_synthetic;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::desk();
        c.data.n_clips = 48;
        c.data.n_actions = 8;
        c.data.n_groups = 2;
        c.data.frame_dim = 8;
        c.data.text_dim = 8;
        c.data.eval_fraction = 0.25;
        c.model.dim = 8;
        c.model.heads = 2;
        c.model.layers = 1;
        c.optim.batch_size = 8;
        c.optim.steps = 6;
        c.rerank.steps = 3;
        c.rerank.batch_size = 8;
        c
    }

    #[test]
    fn zero_steps_give_the_initialization() {
        let mut cfg = tiny();
        cfg.optim.steps = 0;
        cfg.rerank.steps = 0;
        let (data, _) = generate_synthetic::<f32>(&cfg.data, 1).unwrap();
        let out = run_train(&cfg, &data).unwrap();
        let init = init_checkpoint::<f32>(&cfg, model_dims(&cfg, &data.config)).unwrap();
        assert_eq!(out.checkpoint, init);
        assert!(out.losses.is_empty() && out.itm_losses.is_empty());
    }

    #[test]
    fn same_seed_same_checkpoint() {
        let cfg = tiny();
        let (data, _) = generate_synthetic::<f32>(&cfg.data, 2).unwrap();
        let a = run_train(&cfg, &data).unwrap();
        let b = run_train(&cfg, &data).unwrap();
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.losses.len(), 6);
        assert_eq!(a.itm_losses.len(), 3);
    }

    #[test]
    fn batch_larger_than_split_is_rejected() {
        let mut cfg = tiny();
        cfg.optim.batch_size = 64;
        let (data, _) = generate_synthetic::<f32>(&cfg.data, 3).unwrap();
        assert!(matches!(run_train(&cfg, &data), Err(Error::TrainingData(_))));
    }

    #[test]
    fn rerank_disabled_skips_the_cross_encoder() {
        let mut cfg = tiny();
        cfg.rerank.enabled = false;
        let (data, _) = generate_synthetic::<f32>(&cfg.data, 4).unwrap();
        let out = run_train(&cfg, &data).unwrap();
        assert!(out.checkpoint.cross.is_none());
    }
}
