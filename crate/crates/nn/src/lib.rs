//! Small differentiable-computation layer: row-major tensors, layers with
//! hand-written backward passes, LoRA adapters, Adam, finite-difference
//! gradient checking and a binary checkpoint container.
//!
//! Layers work on 2-D `rows × features` tensors; a batch is processed one
//! sequence at a time.

pub mod adam;
pub mod attention;
pub mod checkpoint;
pub mod embedding;
pub mod gradcheck;
pub mod linear;
pub mod norm;
pub mod param;
pub mod tensor;
pub mod transformer;

pub use adam::{Adam, AdamConfig};
pub use attention::MultiHeadAttention;
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointError};
pub use embedding::Embedding;
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
pub use linear::{Linear, LoraAdapter};
pub use norm::LayerNorm;
pub use param::{Module, Param};
pub use tensor::{NnError, Tensor};
pub use transformer::{AttentionMode, Transformer, TransformerConfig};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Transformer32 = Transformer<f32>;
pub type Transformer64 = Transformer<f64>;
