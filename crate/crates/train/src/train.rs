//! Fine-tuning loop. Only parameters flagged trainable move: the adapters,
//! the series and causal embedders and the output projection.

use std::collections::BTreeMap;

use cmts_core::Scalar;
use cmts_model::{Adjacency, CmModel, DgpConfig, ModelInput, TaskKind};
use cmts_nn::{Adam, AdamConfig, Module};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::loss::{compute_loss, LossBreakdown, LossConfig};
use crate::sample::{collate, Batch, SftSample};
use crate::TrainError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            adam: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.adam.lr.is_finite() && self.adam.lr >= 0.0) {
            return Err(TrainError::Config(format!("learning rate {} invalid", self.adam.lr)));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// 1-based.
    pub epoch: usize,
    pub acc: f64,
    pub mask: f64,
    pub total: f64,
}

/// Shuffled mini-batches that never mix tasks or prompt lengths.
pub fn plan_batches<T, R: RngCore + ?Sized>(data: &[SftSample<T>], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<(TaskKind, usize), Vec<usize>> = BTreeMap::new();
    for (i, s) in data.iter().enumerate() {
        groups.entry((s.task.kind(), s.tokens.len())).or_default().push(i);
    }
    let mut batches = Vec::new();
    for (_, mut idx) in groups {
        idx.shuffle(rng);
        batches.extend(idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

/// Runs one batch forward, leaving `dL/dθ` of the batch mean in the model.
pub fn batch_gradients<T: Scalar>(
    model: &mut CmModel<T>,
    batch: &Batch<'_, T>,
    dgp: &DgpConfig,
    loss: &LossConfig,
    mut rng: Option<&mut (dyn RngCore + 'static)>,
) -> Result<LossBreakdown, TrainError> {
    let mut preds = Vec::with_capacity(batch.len());
    let mut caches = Vec::with_capacity(batch.len());
    for s in &batch.samples {
        let adj = Adjacency::from_graph(&s.graph, dgp);
        let input = ModelInput {
            prompt: &s.tokens,
            series: &s.series,
            adjacency: &adj,
        };
        let (y, c) = model.forward(&input, rng.as_deref_mut())?;
        preds.push(y);
        caches.push(c);
    }
    let (l, grads) = compute_loss(&preds, batch, loss)?;
    if l.is_finite() {
        for (c, g) in caches.iter().zip(&grads) {
            model.backward(c, g);
        }
    }
    Ok(l)
}

/// Loss of `data` under the current weights, without updates.
pub fn evaluate_loss<T: Scalar>(
    model: &CmModel<T>,
    data: &[SftSample<T>],
    loss: &LossConfig,
) -> Result<LossBreakdown, TrainError> {
    let mut out = LossBreakdown::default();
    let dgp = model.cfg.dgp.clone();
    for s in data {
        let batch = collate(&[s])?;
        let adj = Adjacency::from_graph(&s.graph, &dgp);
        let y = model.predict(&ModelInput {
            prompt: &s.tokens,
            series: &s.series,
            adjacency: &adj,
        })?;
        let (l, _) = compute_loss(&[y], &batch, loss)?;
        let n = data.len() as f64;
        out.acc += l.acc / n;
        out.mask += l.mask / n;
        out.total += l.total / n;
    }
    Ok(out)
}

/// Trains in place and returns the per-epoch mean batch losses.
pub fn train<T: Scalar>(
    model: &mut CmModel<T>,
    data: &[SftSample<T>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<Vec<EpochLoss>, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d80b);
    let use_dropout = model.cfg.dropout > 0.0;
    let mut opt: Adam<T> = Adam::new(cfg.adam);
    let dgp = model.cfg.dgp.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let plan = plan_batches(data, cfg.batch_size, &mut rng);
        let mut sum = LossBreakdown::default();
        for (bi, idx) in plan.iter().enumerate() {
            let samples: Vec<&SftSample<T>> = idx.iter().map(|&i| &data[i]).collect();
            let batch = collate(&samples)?;
            model.zero_grad();
            let drop: Option<&mut (dyn RngCore + 'static)> = if use_dropout {
                Some(&mut dropout_rng)
            } else {
                None
            };
            let l = batch_gradients(model, &batch, &dgp, &cfg.loss, drop)?;
            if !l.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    acc: l.acc,
                    mask: l.mask,
                });
            }
            opt.step(model)?;
            sum.acc += l.acc;
            sum.mask += l.mask;
            sum.total += l.total;
        }
        let n = plan.len() as f64;
        let e = EpochLoss {
            epoch,
            acc: sum.acc / n,
            mask: sum.mask / n,
            total: sum.total / n,
        };
        on_epoch(&e);
        history.push(e);
    }
    Ok(history)
}

pub fn history_csv(history: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,l_acc,l_mask,total\n");
    for e in history {
        s.push_str(&format!("{},{},{},{}\n", e.epoch, e.acc, e.mask, e.total));
    }
    s
}

/// Mean total loss over the last `window` epochs.
pub fn smoothed_final(history: &[EpochLoss], window: usize) -> f64 {
    let w = window.clamp(1, history.len().max(1));
    let tail = &history[history.len().saturating_sub(w)..];
    tail.iter().map(|e| e.total).sum::<f64>() / tail.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_window() {
        let h: Vec<EpochLoss> = (1..=6)
            .map(|i| EpochLoss {
                epoch: i,
                acc: 0.0,
                mask: 0.0,
                total: i as f64,
            })
            .collect();
        assert_eq!(smoothed_final(&h, 3), 5.0);
        assert_eq!(smoothed_final(&h, 100), 3.5);
        assert!(history_csv(&h[..1]).starts_with("epoch,l_acc,l_mask,total\n1,0,0,1\n"));
    }
}
