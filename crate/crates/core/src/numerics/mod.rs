//! Dense linear algebra and neural kernels: matrices, layer norm, softmax,
//! GELU, masked multi-head self-attention. All operations are pure.

mod attention;
pub mod init;
mod kernels;
mod matrix;

pub use attention::{multi_head_attention, AttentionCache, AttentionParams, MASK_NEG};
pub use kernels::{gelu, layer_norm, softmax, Gelu, LayerNormCache, LayerNormParams, LAYER_NORM_EPS};
pub use matrix::{axpy, dot, norm, Matrix};
