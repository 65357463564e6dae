use cmts_core::Scalar;
use serde::{Deserialize, Serialize};

use crate::param::{Module, Param};
use crate::tensor::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers follow the order of the
/// trainable parameters and are created on the first step.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<M: Module<T> + ?Sized>(&mut self, module: &mut M) -> Result<(), NnError> {
        let params: Vec<&mut Param<T>> = module.params_mut().into_iter().filter(|p| p.trainable).collect();
        self.step_params(params)
    }

    /// Updates the given parameters in place. Non-finite gradients abort the
    /// step before anything is modified.
    pub fn step_params(&mut self, mut params: Vec<&mut Param<T>>) -> Result<(), NnError> {
        if let Some(p) = params.iter().find(|p| !p.grad.all_finite()) {
            return Err(NnError::NonFiniteGradient(p.name.clone()));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(&params).any(|(m, p)| m.len() != p.numel()) {
            return Err(NnError::Config("optimizer state does not match parameters".into()));
        }
        self.t += 1;
        let c = &self.cfg;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.t as i32));
        let lr = T::of(c.lr);
        let eps = T::of(c.eps);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data().to_vec();
            for (i, gi) in g.into_iter().enumerate() {
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                let delta = lr * mh / (vh.sqrt() + eps);
                p.value.data_mut()[i] -= delta;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar(v: f64, g: f64) -> Param<f64> {
        let mut p = Param::new("x", Tensor::from_vec(&[1], vec![v]).unwrap());
        p.grad.data_mut()[0] = g;
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar(1.5, 0.0);
        let mut opt = Adam::new(AdamConfig::default());
        opt.step_params(vec![&mut p]).unwrap();
        assert_eq!(p.value.data()[0], 1.5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps)
        let mut p = scalar(1.0, 0.25);
        let mut opt = Adam::new(AdamConfig {
            lr: 0.1,
            ..Default::default()
        });
        opt.step_params(vec![&mut p]).unwrap();
        let expected = 1.0 - 0.1 * 0.25 / (0.25 + 1e-8);
        assert!((p.value.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_rejected_by_name() {
        let mut p = scalar(1.0, f64::NAN);
        let mut opt = Adam::new(AdamConfig::default());
        assert_eq!(opt.step_params(vec![&mut p]), Err(NnError::NonFiniteGradient("x".into())));
        assert_eq!(p.value.data()[0], 1.0);
    }
}
