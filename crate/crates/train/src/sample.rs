//! Supervised samples and padded batches.

use std::sync::Arc;

use cmts_core::mask::gen_mask_imputation_with;
use cmts_core::{
    apply_mask, gen_mask_forecast, gen_mask_superres, CausalGraph, ImputationMaskConfig, MaskMatrix, MaskedSeries,
    Scalar, TimeSeriesMatrix,
};
use cmts_model::{render, series_tensor, PromptContext, TaskKind, Tokenizer};
use cmts_nn::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::TrainError;

/// A task and its mask parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskSpec {
    Imputation {
        mu: f64,
        sigma: f64,
        #[serde(default = "one")]
        segments: usize,
    },
    Forecast {
        horizon: usize,
    },
    Superres {
        factor: usize,
    },
}

fn one() -> usize {
    1
}

impl TaskSpec {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskSpec::Imputation { .. } => TaskKind::Imputation,
            TaskSpec::Forecast { .. } => TaskKind::Forecast,
            TaskSpec::Superres { .. } => TaskKind::Superres,
        }
    }

    pub fn mask<R: Rng + ?Sized>(&self, n_vars: usize, len: usize, rng: &mut R) -> Result<MaskMatrix, TrainError> {
        Ok(match *self {
            TaskSpec::Imputation { mu, sigma, segments } => {
                let cfg = ImputationMaskConfig {
                    mu,
                    sigma,
                    segments_per_variable: segments,
                    rng_seed: 0,
                };
                gen_mask_imputation_with(n_vars, len, &cfg, rng)
            }
            TaskSpec::Forecast { horizon } => gen_mask_forecast(n_vars, len, horizon)?,
            TaskSpec::Superres { factor } => gen_mask_superres(n_vars, len, factor)?,
        })
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = match *self {
            TaskSpec::Imputation { mu, sigma, .. } => mu.is_finite() && mu >= 0.0 && sigma.is_finite() && sigma >= 0.0,
            TaskSpec::Forecast { .. } => true,
            TaskSpec::Superres { factor } => factor >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!("invalid task parameters {self:?}")))
        }
    }

    fn fill(&self, ctx: &mut PromptContext) {
        match *self {
            TaskSpec::Imputation { mu, .. } => ctx.mu = mu,
            TaskSpec::Forecast { horizon } => ctx.horizon = horizon,
            TaskSpec::Superres { factor } => ctx.factor = factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    /// Input length every sample is padded or truncated to.
    pub l_fix: usize,
    /// Allow days longer than `l_fix` to be cut.
    pub truncate: bool,
    pub scenario: String,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            l_fix: 1440,
            truncate: true,
            scenario: String::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SftSample<T> {
    pub task: TaskSpec,
    pub prompt: String,
    pub tokens: Vec<usize>,
    pub graph: Arc<CausalGraph>,
    /// `F × L_fix`, sentinel-padded beyond `valid_len`.
    pub input: MaskedSeries<T>,
    /// `input` in the `L_fix × F` model layout.
    pub series: Tensor<T>,
    /// Normalized `F × L_valid`.
    pub target: TimeSeriesMatrix<T>,
    /// `F × L_valid`.
    pub mask: MaskMatrix,
    pub valid_len: usize,
}

impl<T: Scalar> SftSample<T> {
    pub fn n_vars(&self) -> usize {
        self.target.n_vars()
    }
}

/// Masks a normalized day for `task`, renders its prompt and pads the input.
pub fn build_sample<T: Scalar, R: Rng + ?Sized>(
    day: &TimeSeriesMatrix<T>,
    task: &TaskSpec,
    graph: Arc<CausalGraph>,
    tokenizer: &Tokenizer,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<SftSample<T>, TrainError> {
    if !day.is_normalized() {
        return Err(cmts_core::DataError::NotNormalized.into());
    }
    task.validate()?;
    graph.check_nodes(day.variable_names())?;
    if cfg.l_fix == 0 {
        return Err(TrainError::Config("l_fix must be positive".into()));
    }
    if day.len() > cfg.l_fix && !cfg.truncate {
        return Err(TrainError::TooLong {
            len: day.len(),
            l_fix: cfg.l_fix,
        });
    }
    let target = day.truncated(cfg.l_fix);
    let valid_len = target.len();
    let mask = task.mask(target.n_vars(), valid_len, rng)?;
    let input = apply_mask(&target, &mask)?.padded_to(cfg.l_fix);
    let mut ctx = PromptContext {
        scenario: cfg.scenario.clone(),
        variables: target.variable_names().to_vec(),
        resolution_minutes: target.resolution_minutes(),
        length: valid_len,
        ..Default::default()
    };
    task.fill(&mut ctx);
    let prompt = render(task.kind(), &ctx);
    let tokens = tokenizer.tokenize(&prompt)?.ids;
    let series = series_tensor(&input);
    Ok(SftSample {
        task: task.clone(),
        prompt,
        tokens,
        graph,
        input,
        series,
        target,
        mask,
        valid_len,
    })
}

/// Samples stacked for one optimizer step. Targets, masks and the padding
/// flags are `B × L_max × F`, timestep-major like the model output.
#[derive(Debug, Clone)]
pub struct Batch<'a, T> {
    pub samples: Vec<&'a SftSample<T>>,
    pub l_max: usize,
    pub n_vars: usize,
    pub targets: Vec<T>,
    pub masks: Vec<u8>,
    /// 1 where a step lies beyond the sample's valid length.
    pub padding: Vec<u8>,
    pub valid: Vec<usize>,
}

impl<T: Scalar> Batch<'_, T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn prompt_len(&self) -> usize {
        self.samples.first().map_or(0, |s| s.tokens.len())
    }

    /// Target slab of sample `b`.
    pub fn target(&self, b: usize) -> &[T] {
        let n = self.l_max * self.n_vars;
        &self.targets[b * n..(b + 1) * n]
    }

    pub fn mask(&self, b: usize) -> &[u8] {
        let n = self.l_max * self.n_vars;
        &self.masks[b * n..(b + 1) * n]
    }
}

/// Pads targets and masks to the largest valid length in the batch.
pub fn collate<'a, T: Scalar>(samples: &[&'a SftSample<T>]) -> Result<Batch<'a, T>, TrainError> {
    let first = samples.first().ok_or(TrainError::EmptyBatch)?;
    let f = first.n_vars();
    let l_txt = first.tokens.len();
    for s in samples {
        if s.n_vars() != f {
            return Err(TrainError::MixedVariables {
                expected: f,
                got: s.n_vars(),
            });
        }
        if s.tokens.len() != l_txt {
            return Err(TrainError::MixedPromptLength {
                expected: l_txt,
                got: s.tokens.len(),
            });
        }
    }
    let l_max = samples.iter().map(|s| s.valid_len).max().unwrap_or(0);
    let n = l_max * f;
    let mut targets = vec![T::zero(); samples.len() * n];
    let mut masks = vec![0u8; samples.len() * n];
    let mut padding = vec![0u8; samples.len() * l_max];
    for (b, s) in samples.iter().enumerate() {
        for t in 0..l_max {
            if t >= s.valid_len {
                padding[b * l_max + t] = 1;
                continue;
            }
            for v in 0..f {
                targets[b * n + t * f + v] = s.target.get(v, t);
                masks[b * n + t * f + v] = s.mask.get(v, t) as u8;
            }
        }
    }
    Ok(Batch {
        samples: samples.to_vec(),
        l_max,
        n_vars: f,
        targets,
        masks,
        padding,
        valid: samples.iter().map(|s| s.valid_len).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use cmts_core::graph::CausalGraph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn day(len: usize) -> TimeSeriesMatrix<f64> {
        let names = vec!["a".to_string(), "b".to_string()];
        let v = (0..2 * len).map(|i| (i % 10) as f64 / 10.0).collect();
        TimeSeriesMatrix::new_normalized(names, v, len, 15).unwrap()
    }

    fn graph() -> Arc<CausalGraph> {
        Arc::new(CausalGraph::new(vec!["a".into(), "b".into()], vec![]).unwrap())
    }

    fn cfg(l_fix: usize) -> SampleConfig {
        SampleConfig {
            l_fix,
            truncate: false,
            scenario: String::new(),
        }
    }

    #[test]
    fn forecast_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tok = Tokenizer::default();
        let s = build_sample(&day(96), &TaskSpec::Forecast { horizon: 24 }, graph(), &tok, &cfg(96), &mut rng).unwrap();
        assert!(s.prompt.contains("forecasting"));
        for v in 0..2 {
            assert!(s.mask.row(v)[..72].iter().all(|&m| m == 0));
            assert!(s.mask.row(v)[72..].iter().all(|&m| m == 1));
        }
    }

    #[test]
    fn superres_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = build_sample(
            &day(96),
            &TaskSpec::Superres { factor: 3 },
            graph(),
            &Tokenizer::default(),
            &cfg(96),
            &mut rng,
        )
        .unwrap();
        assert_eq!(s.mask.count_masked(), 2 * 64);
    }

    #[test]
    fn empty_imputation_mask_keeps_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = day(48);
        let task = TaskSpec::Imputation {
            mu: 0.0,
            sigma: 0.0,
            segments: 1,
        };
        let s = build_sample(&d, &task, graph(), &Tokenizer::default(), &cfg(96), &mut rng).unwrap();
        assert_eq!(s.valid_len, 48);
        for v in 0..2 {
            assert_eq!(&s.input.row(v)[..48], d.row(v));
            assert!(s.input.row(v)[48..].iter().all(|&x| x == -1.0));
            assert!(s.input.mask().row(v)[48..].iter().all(|&m| m == 0));
        }
    }

    #[test]
    fn too_long_without_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = build_sample(
            &day(100),
            &TaskSpec::Forecast { horizon: 1 },
            graph(),
            &Tokenizer::default(),
            &cfg(96),
            &mut rng,
        );
        assert!(matches!(r, Err(TrainError::TooLong { len: 100, l_fix: 96 })));
    }

    #[test]
    fn collate_pads_to_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tok = Tokenizer::default();
        let task = TaskSpec::Forecast { horizon: 4 };
        let a = build_sample(&day(96), &task, graph(), &tok, &cfg(128), &mut rng).unwrap();
        let mut b = build_sample(&day(120), &task, graph(), &tok, &cfg(128), &mut rng).unwrap();
        // prompts differ in the length field; equalize for the test
        b.tokens = a.tokens.clone();
        let batch = collate(&[&a, &b]).unwrap();
        assert_eq!(batch.l_max, 120);
        assert_eq!(batch.valid, vec![96, 120]);
        assert_eq!(batch.padding.iter().filter(|&&p| p == 1).count(), 24);
        let same = collate(&[&a, &a]).unwrap();
        assert!(same.padding.iter().all(|&p| p == 0));
        assert!(matches!(collate::<f64>(&[]), Err(TrainError::EmptyBatch)));
    }
}
