use cmts_core::Scalar;

use crate::param::{Module, Param};
use crate::tensor::{NnError, Tensor};

/// Per-row layer normalization with learned gain and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub eps: f64,
    dim: usize,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    shape: Vec<usize>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(name: &str, dim: usize) -> Self {
        let mut gamma = Param::zeros(format!("{name}.gamma"), &[dim]);
        gamma.value.fill(T::one());
        Self {
            gamma,
            beta: Param::zeros(format!("{name}.beta"), &[dim]),
            eps: 1e-5,
            dim,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, LayerNormCache<T>), NnError> {
        let (n, d) = x.dims2();
        if d != self.dim {
            return Err(NnError::Shape {
                expected: vec![n, self.dim],
                got: x.shape().to_vec(),
            });
        }
        let dt = T::of(d as f64);
        let eps = T::of(self.eps);
        let mut xhat = Vec::with_capacity(n * d);
        let mut inv_std = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n * d);
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for row in x.data().chunks_exact(d) {
            let mean = row.iter().copied().sum::<T>() / dt;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / dt;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let h = (*v - mean) * is;
                xhat.push(h);
                y.push(g[j] * h + b[j]);
            }
        }
        Ok((
            Tensor::from_vec(x.shape(), y)?,
            LayerNormCache {
                xhat,
                inv_std,
                shape: x.shape().to_vec(),
            },
        ))
    }

    pub fn backward(&mut self, cache: &LayerNormCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let d = self.dim;
        let dt = T::of(d as f64);
        let g = self.gamma.value.data().to_vec();
        let mut gg = vec![T::zero(); d];
        let mut gb = vec![T::zero(); d];
        let mut dx = Vec::with_capacity(dy.len());
        for (r, (dyr, xh)) in dy.data().chunks_exact(d).zip(cache.xhat.chunks_exact(d)).enumerate() {
            let mut m1 = T::zero();
            let mut m2 = T::zero();
            for j in 0..d {
                gg[j] += dyr[j] * xh[j];
                gb[j] += dyr[j];
                let dh = dyr[j] * g[j];
                m1 += dh;
                m2 += dh * xh[j];
            }
            m1 /= dt;
            m2 /= dt;
            let is = cache.inv_std[r];
            for j in 0..d {
                dx.push(is * (dyr[j] * g[j] - m1 - xh[j] * m2));
            }
        }
        self.gamma.accumulate_all(&gg);
        self.beta.accumulate_all(&gb);
        Tensor::from_vec(&cache.shape, dx).expect("cached shape")
    }
}

impl<T: Scalar> Module<T> for LayerNorm<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
