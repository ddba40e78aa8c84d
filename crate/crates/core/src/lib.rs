//! Temporal video-text retrieval: a transformer over frame features, a
//! soft-label metric-learning objective, cross-encoder reranking and graded
//! ranking metrics. Everything numeric is generic over [`Scalar`] (`f32` or
//! `f64`); the pipeline and on-disk formats use `f32`.

pub mod error;
pub mod eval;
pub mod formats;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod params;
pub mod pipeline;
pub mod rerank;
pub mod retrieval;
pub mod scalar;
pub mod temporal;

#[cfg(test)]
mod test_util;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix32 = numerics::Matrix<f32>;
pub type Matrix64 = numerics::Matrix<f64>;
pub type Embeddings32 = retrieval::EmbeddingMatrix<f32>;
pub type Embeddings64 = retrieval::EmbeddingMatrix<f64>;
pub type Relevance32 = objective::RelevanceMatrix<f32>;
pub type Relevance64 = objective::RelevanceMatrix<f64>;
pub type Clip32 = temporal::FrameSequence<f32>;
pub type Clip64 = temporal::FrameSequence<f64>;
pub type Encoder32 = model::DualEncoder<f32>;
pub type Encoder64 = model::DualEncoder<f64>;
pub type Checkpoint32 = pipeline::Checkpoint<f32>;
pub type Dataset32 = pipeline::DatasetBundle<f32>;
