//! Run configuration. Files are flat `key = value` lines with dotted keys
//! (`model.layers = 4`) and `#` comments, which is a subset of TOML; unknown
//! keys are rejected. Every key has a default, so an empty file is valid.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelDims;
use crate::objective::{AdamWConfig, SmsConfig};
use crate::rerank::ItmTrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Clips; there is one paired caption per clip.
    pub n_clips: usize,
    /// Vocabulary of action steps.
    pub n_actions: usize,
    /// Step sets; each yields one class per cyclic ordering.
    pub n_groups: usize,
    pub steps_per_class: usize,
    /// Frames per clip.
    pub frames: usize,
    pub frame_dim: usize,
    pub text_dim: usize,
    /// Noise norm relative to the unit-norm signal.
    pub frame_noise: f64,
    pub text_noise: f64,
    /// Trailing fraction of clips held out for evaluation.
    pub eval_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_clips: 2000,
            n_actions: 64,
            n_groups: 25,
            steps_per_class: 4,
            frames: 8,
            frame_dim: 64,
            text_dim: 64,
            frame_noise: 0.5,
            text_noise: 0.5,
            eval_fraction: 0.2,
        }
    }
}

impl DataConfig {
    pub fn n_classes(&self) -> usize {
        self.n_groups * self.steps_per_class
    }

    pub fn n_eval(&self) -> usize {
        (self.n_clips as f64 * self.eval_fraction).round() as usize
    }

    pub fn n_train(&self) -> usize {
        self.n_clips - self.n_eval()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_clips == 0 || self.frames == 0 || self.frame_dim == 0 || self.text_dim == 0 {
            return bad("data sizes must be positive".into());
        }
        if self.steps_per_class == 0 || self.steps_per_class > self.n_actions {
            return bad(format!(
                "data.steps_per_class must be in 1..={} (got {})",
                self.n_actions, self.steps_per_class
            ));
        }
        if self.steps_per_class > self.frames {
            return bad("data.steps_per_class cannot exceed data.frames".into());
        }
        if self.n_groups == 0 {
            return bad("data.n_groups must be positive".into());
        }
        if !(self.frame_noise >= 0.0 && self.text_noise >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return bad(format!("data.eval_fraction must be in [0, 1) (got {})", self.eval_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub t_max: usize,
    pub temporal: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 512,
            heads: 8,
            layers: 4,
            t_max: crate::temporal::DEFAULT_T_MAX,
            temporal: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub margin: f64,
    pub tau: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        let s = SmsConfig::default();
        Self {
            margin: s.margin,
            tau: s.tau,
            epsilon: s.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub temporal_lr_mult: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        let a = AdamWConfig::default();
        Self {
            lr: 1.8e-5,
            batch_size: 64,
            steps: 1000,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
            temporal_lr_mult: a.temporal_lr_mult,
        }
    }
}

impl OptimConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            temporal_lr_mult: self.temporal_lr_mult,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankConfig {
    pub enabled: bool,
    pub k: usize,
    pub alpha: f64,
    pub theta_pos: f64,
    pub theta_neg: f64,
    pub hard_negatives: usize,
    pub hard_fraction: f64,
    pub layers: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            k: 1000,
            alpha: 0.002,
            theta_pos: 0.5,
            theta_neg: 0.1,
            hard_negatives: 0,
            hard_fraction: 0.0,
            layers: crate::rerank::DEFAULT_CROSS_LAYERS,
            steps: 500,
            batch_size: 64,
            lr: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub rerank: RerankConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            rerank: RerankConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    /// Small model for CPU runs on the synthetic data: D=64, L=2, with a
    /// learning rate high enough to train from scratch.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.model.dim = 64;
        c.model.layers = 2;
        c.model.t_max = 8;
        c.optim.lr = 1e-3;
        c.optim.steps = 600;
        c.rerank.k = 20;
        c.rerank.lr = 1e-3;
        c.rerank.steps = 1500;
        c.rerank.hard_negatives = 20;
        c.rerank.hard_fraction = 0.5;
        c
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = crate::formats::read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        let m = &self.model;
        if m.dim == 0 || m.heads == 0 || m.dim % m.heads != 0 {
            return Err(Error::Config(format!(
                "model.dim ({}) must be a positive multiple of model.heads ({})",
                m.dim, m.heads
            )));
        }
        if m.temporal && (m.layers == 0 || m.t_max == 0) {
            return Err(Error::Config("model.layers and model.t_max must be positive".into()));
        }
        self.sms().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.optim.batch_size < 2 {
            return Err(Error::Config("optim.batch_size must be at least 2".into()));
        }
        if !(self.optim.lr >= 0.0) || !(self.optim.temporal_lr_mult >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        let r = &self.rerank;
        if r.k == 0 {
            return Err(Error::Config("rerank.k must be at least 1".into()));
        }
        if !(0.0 <= r.theta_neg && r.theta_neg < r.theta_pos && r.theta_pos <= 1.0) {
            return Err(Error::Config("need 0 <= rerank.theta_neg < rerank.theta_pos <= 1".into()));
        }
        if r.batch_size < 2 {
            return Err(Error::Config("rerank.batch_size must be at least 2".into()));
        }
        Ok(())
    }

    pub fn sms(&self) -> SmsConfig {
        SmsConfig {
            margin: self.loss.margin,
            tau: self.loss.tau,
            epsilon: self.loss.epsilon,
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            frame_dim: self.data.frame_dim,
            text_dim: self.data.text_dim,
            dim: self.model.dim,
            heads: self.model.heads,
            layers: self.model.layers,
            t_max: self.model.t_max,
            temporal: self.model.temporal,
        }
    }

    pub fn itm(&self) -> ItmTrainConfig {
        ItmTrainConfig {
            steps: self.rerank.steps,
            batch_size: self.rerank.batch_size,
            lr: self.rerank.lr,
            theta_pos: self.rerank.theta_pos,
            theta_neg: self.rerank.theta_neg,
            hard_negatives: self.rerank.hard_negatives,
            hard_fraction: self.rerank.hard_fraction,
            adamw: self.optim.adamw(),
            seed: self.seed,
        }
    }
}
