//! Supervised fine-tuning: sample assembly for the three reconstruction
//! tasks, padded batching, the masked loss, the training loop and
//! inference helpers.

pub mod infer;
pub mod loss;
pub mod sample;
pub mod train;

use std::sync::Arc;

use cmts_core::{CausalGraph, DataError, GraphError, Scalar, TimeSeriesMatrix};
use cmts_model::{ModelError, Tokenizer, TokenizerError};
use cmts_nn::NnError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use infer::{fill_masked, global_means, mean_fill, predict_sample, reconstruct_raw};
pub use loss::{compute_loss, sample_loss, LossBreakdown, LossConfig};
pub use sample::{build_sample, collate, Batch, SampleConfig, SftSample, TaskSpec};
pub use train::{history_csv, smoothed_final, train, EpochLoss, TrainConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error("day of {len} steps exceeds the fixed length {l_fix} and truncation is off")]
    TooLong { len: usize, l_fix: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch mixes {expected} and {got} variables")]
    MixedVariables { expected: usize, got: usize },
    #[error("batch mixes prompt lengths {expected} and {got}")]
    MixedPromptLength { expected: usize, got: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch} (L_acc = {acc}, L_mask = {mask})")]
    NonFiniteLoss { epoch: usize, batch: usize, acc: f64, mask: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl From<NnError> for TrainError {
    fn from(e: NnError) -> Self {
        TrainError::Model(ModelError::Nn(e))
    }
}

impl TrainError {
    /// True for failures caused by numerics rather than inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            TrainError::NonFiniteLoss { .. }
                | TrainError::Model(ModelError::Nn(NnError::NonFinite(_) | NnError::NonFiniteGradient(_)))
        )
    }
}

/// One sample per (day, task), each masked with its own generator stream.
pub fn build_pooled<T: Scalar>(
    days: &[TimeSeriesMatrix<T>],
    tasks: &[TaskSpec],
    graph: Arc<CausalGraph>,
    tokenizer: &Tokenizer,
    cfg: &SampleConfig,
    seed: u64,
) -> Result<Vec<SftSample<T>>, TrainError> {
    let mut out = Vec::with_capacity(days.len() * tasks.len());
    for (d, day) in days.iter().enumerate() {
        for (k, task) in tasks.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((d * tasks.len() + k) as u64);
            out.push(build_sample(day, task, graph.clone(), tokenizer, cfg, &mut rng)?);
        }
    }
    Ok(out)
}

pub type Sample = SftSample<f32>;
pub type Sample64 = SftSample<f64>;
