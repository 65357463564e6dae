//! Reconstruction model: a frozen word tokenizer and token table for the
//! instruction prefix, a per-step series embedding, graph propagation over
//! the discovered causal structure, and a small transformer backbone tuned
//! through low-rank adapters.

pub mod dgp;
pub mod model;
pub mod prompt;
pub mod tokenizer;

pub use dgp::{Adjacency, Dgp, DgpConfig};
pub use model::{series_tensor, Ablation, CmModel, ModelConfig, ModelError, ModelInput};
pub use prompt::{render, PromptContext, TaskKind, DEFAULT_SCENARIO};
pub use tokenizer::{PromptTokens, Tokenizer, TokenizerError};

pub type CmModel32 = CmModel<f32>;
pub type CmModel64 = CmModel<f64>;
