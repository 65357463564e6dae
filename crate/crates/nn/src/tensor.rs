//! Row-major dense tensors and the handful of matrix kernels the layers need.

use cmts_core::Scalar;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },
    #[error("buffer of {got} values cannot have shape {shape:?}")]
    Buffer { shape: Vec<usize>, got: usize },
    #[error("sequence length {len} exceeds the maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("LoRA rank {rank} exceeds min({rows}, {cols})")]
    RankTooLarge { rank: usize, rows: usize, cols: usize },
    #[error("non-finite gradient in `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite value produced by `{0}`")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, NnError> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(NnError::Buffer {
                shape: shape.to_vec(),
                got: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Rows and columns of a 2-D tensor (a 1-D tensor is one row).
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [c] => (1, *c),
            [r, c] => (*r, *c),
            s => (s[..s.len() - 1].iter().product(), s[s.len() - 1]),
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let (_, c) = self.dims2();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, NnError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(NnError::Buffer {
                shape: shape.to_vec(),
                got: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<(), NnError> {
        if self.shape != shape {
            return Err(NnError::Shape {
                expected: shape.to_vec(),
                got: self.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| *x * s).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of(x.to_f64_lossy())).collect(),
        }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor<T>]) -> Result<Self, NnError> {
        let first = parts.first().ok_or(NnError::Buffer { shape: vec![0], got: 0 })?;
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(parts.len() * first.len());
        for p in parts {
            p.expect_shape(&first.shape)?;
            data.extend_from_slice(&p.data);
        }
        Ok(Self { shape, data })
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor<T> {
        let (_, c) = self.dims2();
        Tensor {
            shape: vec![end - start, c],
            data: self.data[start * c..end * c].to_vec(),
        }
    }

    /// Vertical concatenation of 2-D tensors with equal column counts.
    pub fn concat_rows(parts: &[&Tensor<T>]) -> Result<Tensor<T>, NnError> {
        let c = parts.first().map_or(0, |p| p.dims2().1);
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (r, pc) = p.dims2();
            if pc != c {
                return Err(NnError::Shape {
                    expected: vec![r, c],
                    got: p.shape.clone(),
                });
            }
            rows += r;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            shape: vec![rows, c],
            data,
        })
    }
}

/// `out (n×m) += a (n×k) · bᵀ` with `b` stored `m×k`.
pub fn matmul_nt_acc<T: Scalar>(out: &mut [T], a: &[T], b: &[T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..m {
            out[i * m + j] += dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Inner product with eight independent partial sums so the compiler can
/// vectorize it.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

/// `out (n×m) += a (n×k) · b (k×m)`.
pub fn matmul_nn_acc<T: Scalar>(out: &mut [T], a: &[T], b: &[T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            let br = &b[p * m..(p + 1) * m];
            for j in 0..m {
                orow[j] += aip * br[j];
            }
        }
    }
}

/// `out (k×m) += aᵀ · b` with `a` stored `n×k` and `b` stored `n×m`.
pub fn matmul_tn_acc<T: Scalar>(out: &mut [T], a: &[T], b: &[T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let br = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            let orow = &mut out[p * m..(p + 1) * m];
            for j in 0..m {
                orow[j] += aip * br[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_agree_with_loops() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 - 2.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|i| (i as f64 * 0.5).sin()).collect(); // 4x3 or 3x4
        let mut nt = vec![0.0; 8];
        matmul_nt_acc(&mut nt, &a, &b, 2, 3, 4);
        let mut nn = vec![0.0; 8];
        matmul_nn_acc(&mut nn, &a, &b, 2, 3, 4);
        for i in 0..2 {
            for j in 0..4 {
                let e_nt: f64 = (0..3).map(|p| a[i * 3 + p] * b[j * 3 + p]).sum();
                let e_nn: f64 = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum();
                assert!((nt[i * 4 + j] - e_nt).abs() < 1e-14);
                assert!((nn[i * 4 + j] - e_nn).abs() < 1e-14);
            }
        }
        let mut tn = vec![0.0; 12];
        matmul_tn_acc(&mut tn, &a, &nn, 2, 3, 4);
        for p in 0..3 {
            for j in 0..4 {
                let e: f64 = (0..2).map(|i| a[i * 3 + p] * nn[i * 4 + j]).sum();
                assert!((tn[p * 4 + j] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn buffer_checked() {
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![0.0; 3]).is_err());
        let t = Tensor::<f32>::zeros(&[2, 3, 4]);
        assert_eq!(t.dims2(), (6, 4));
    }
}
