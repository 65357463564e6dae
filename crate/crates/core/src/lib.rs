//! Data model, masking, prior-constrained causal discovery, evaluation
//! metrics and a synthetic PV + storage plant.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiations.

pub mod causal;
pub mod csvio;
pub mod graph;
pub mod linalg;
pub mod mask;
pub mod metrics;
pub mod plant;
mod scalar;
pub mod series;

pub use causal::{discover, CausalError, CiTestConfig, SampleMatrix};
pub use graph::{CausalEdge, CausalGraph, GraphError, GraphJson, PriorGraph};
pub use mask::{gen_mask_forecast, gen_mask_imputation, gen_mask_superres, ImputationMaskConfig};
pub use metrics::{MetricError, MetricReport, Scope};
pub use plant::{generate_dataset, generate_day, PlantConfig, PlantDay, PowerRoles};
pub use scalar::Scalar;
pub use series::{
    apply_mask, denormalize, instance_normalize, DataError, MaskMatrix, MaskedSeries, NormalizationParams,
    TimeSeriesMatrix, MASK_SENTINEL,
};

pub type TimeSeries = TimeSeriesMatrix<f64>;
pub type TimeSeries32 = TimeSeriesMatrix<f32>;
pub type Samples = SampleMatrix<f64>;
pub type Masked = MaskedSeries<f64>;
