//! Training machinery: soft-label weights, the symmetric multi-similarity
//! loss and its gradient, AdamW, and the cosine learning-rate schedule.

mod optim;
mod sms;

pub use optim::{adamw_step, cosine_lr, AdamWConfig, OptimizerState};
pub use sms::{
    sms_loss, sms_loss_and_grad, sms_loss_grad, sms_pair_loss, sms_pair_loss_grad, weights_from_relevance,
    RelevanceMatrix, SmsConfig,
};
