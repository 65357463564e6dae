use cmts_core::Scalar;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{NnError, Tensor};

/// A named weight with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
            trainable: true,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, Tensor::zeros(shape))
    }

    /// Entries drawn from `N(0, std²)` in `f64` and rounded to `T`, so models
    /// built at different precisions from one seed hold the same weights.
    pub fn normal<R: Rng + ?Sized>(name: impl Into<String>, shape: &[usize], std: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std).expect("finite std");
        Self::new(name, Tensor::from_fn(shape, |_| T::of(dist.sample(rng))))
    }

    pub fn uniform<R: Rng + ?Sized>(name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut R) -> Self {
        Self::new(
            name,
            Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..=bound))),
        )
    }

    pub fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    /// Adds `g` into the gradient unless the parameter is frozen.
    #[inline]
    pub fn accumulate(&mut self, i: usize, g: T) {
        if self.trainable {
            self.grad.data_mut()[i] += g;
        }
    }

    pub fn accumulate_all(&mut self, g: &[T]) {
        if self.trainable {
            for (a, b) in self.grad.data_mut().iter_mut().zip(g) {
                *a += *b;
            }
        }
    }
}

/// Anything that owns parameters. Traversal order is stable and defines the
/// optimizer state layout and the checkpoint entry order.
pub trait Module<T: Scalar> {
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    fn n_trainable(&self) -> usize {
        self.params().iter().filter(|p| p.trainable).map(|p| p.numel()).sum()
    }

    fn set_trainable(&mut self, trainable: bool) {
        for p in self.params_mut() {
            p.trainable = trainable;
        }
    }

    fn state(&self) -> Vec<(String, Tensor<T>)> {
        self.params().into_iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    /// Copies values from `entries` by name. Every parameter must be present
    /// with its exact shape.
    fn load_state(&mut self, entries: &[(String, Tensor<T>)]) -> Result<(), NnError> {
        for p in self.params_mut() {
            let (_, t) = entries
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| NnError::Config(format!("missing parameter `{}`", p.name)))?;
            t.expect_shape(p.value.shape())?;
            p.value = t.clone();
        }
        Ok(())
    }
}
