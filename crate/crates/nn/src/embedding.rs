use cmts_core::Scalar;
use rand::Rng;

use crate::param::{Module, Param};
use crate::tensor::{NnError, Tensor};

/// Lookup table `vocab × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T> {
    pub table: Param<T>,
    vocab: usize,
    dim: usize,
}

impl<T: Scalar> Embedding<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, vocab: usize, dim: usize, std: f64, rng: &mut R) -> Self {
        Self {
            table: Param::normal(format!("{name}.table"), &[vocab, dim], std, rng),
            vocab,
            dim,
        }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn forward(&self, ids: &[usize]) -> Result<Tensor<T>, NnError> {
        let mut out = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            if id >= self.vocab {
                return Err(NnError::TokenOutOfRange { id, vocab: self.vocab });
            }
            out.extend_from_slice(self.table.value.row(id));
        }
        Tensor::from_vec(&[ids.len(), self.dim], out)
    }

    pub fn backward(&mut self, ids: &[usize], dy: &Tensor<T>) {
        if !self.table.trainable {
            return;
        }
        for (r, &id) in ids.iter().enumerate() {
            for j in 0..self.dim {
                self.table.accumulate(id * self.dim + j, dy.data()[r * self.dim + j]);
            }
        }
    }
}

impl<T: Scalar> Module<T> for Embedding<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.table]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.table]
    }
}
