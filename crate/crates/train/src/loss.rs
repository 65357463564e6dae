//! Reconstruction loss `L_acc + λ1·L_mask`, computed per sample over its
//! valid steps only and averaged over the batch.

use cmts_core::Scalar;
use cmts_nn::Tensor;
use serde::{Deserialize, Serialize};

use crate::sample::Batch;
use crate::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda1: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda1: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lambda1.is_finite() && self.lambda1 >= 0.0 {
            Ok(())
        } else {
            Err(TrainError::Config(format!("lambda1 must be >= 0, got {}", self.lambda1)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Mean squared error over every valid cell.
    pub acc: f64,
    /// Mean squared error over masked valid cells; zero when none are masked.
    pub mask: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.acc.is_finite() && self.mask.is_finite() && self.total.is_finite()
    }
}

/// Loss of one prediction (`≥ valid × F`, timestep-major) against a
/// timestep-major target slab, plus `dL/dŶ` scaled by `scale`.
///
/// Rows of `pred` at or beyond `valid` receive zero gradient.
pub fn sample_loss<T: Scalar>(
    pred: &Tensor<T>,
    target: &[T],
    mask: &[u8],
    valid: usize,
    cfg: &LossConfig,
    scale: f64,
) -> (LossBreakdown, Tensor<T>) {
    let (rows, f) = pred.dims2();
    let p = pred.data();
    let n_valid = (valid * f) as f64;
    let n_mask = mask[..valid * f].iter().filter(|&&m| m == 1).count() as f64;
    let mut sq_all = 0.0;
    let mut sq_mask = 0.0;
    let mut grad = Tensor::zeros(&[rows, f]);
    let g = grad.data_mut();
    for i in 0..valid * f {
        let e = p[i].to_f64_lossy() - target[i].to_f64_lossy();
        sq_all += e * e;
        let mut d = 2.0 * e / n_valid;
        if mask[i] == 1 {
            sq_mask += e * e;
            d += cfg.lambda1 * 2.0 * e / n_mask;
        }
        g[i] = T::of(d * scale);
    }
    let acc = if n_valid > 0.0 { sq_all / n_valid } else { 0.0 };
    let mask_term = if n_mask > 0.0 { sq_mask / n_mask } else { 0.0 };
    (
        LossBreakdown {
            acc,
            mask: mask_term,
            total: acc + cfg.lambda1 * mask_term,
        },
        grad,
    )
}

/// Batch loss (mean over samples) and per-sample gradients of that mean.
pub fn compute_loss<T: Scalar>(
    preds: &[Tensor<T>],
    batch: &Batch<'_, T>,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<Tensor<T>>), TrainError> {
    if preds.len() != batch.len() {
        return Err(TrainError::Config(format!(
            "{} predictions for a batch of {}",
            preds.len(),
            batch.len()
        )));
    }
    let b = batch.len() as f64;
    let mut out = LossBreakdown::default();
    let mut grads = Vec::with_capacity(preds.len());
    for (i, pred) in preds.iter().enumerate() {
        let (rows, f) = pred.dims2();
        if f != batch.n_vars || rows < batch.valid[i] {
            return Err(TrainError::Config(format!(
                "prediction {i} is {rows}x{f}, needs at least {}x{}",
                batch.valid[i], batch.n_vars
            )));
        }
        let (l, g) = sample_loss(pred, batch.target(i), batch.mask(i), batch.valid[i], cfg, 1.0 / b);
        out.acc += l.acc / b;
        out.mask += l.mask / b;
        out.total += l.total / b;
        grads.push(g);
    }
    Ok((out, grads))
}
