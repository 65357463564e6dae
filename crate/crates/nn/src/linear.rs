use cmts_core::Scalar;
use rand::Rng;

use crate::param::{Module, Param};
use crate::tensor::{matmul_nn_acc, matmul_nt_acc, matmul_tn_acc, NnError, Tensor};

/// Low-rank update `scaling · B·A` on top of a frozen weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter<T> {
    /// `r × in`
    pub a: Param<T>,
    /// `out × r`
    pub b: Param<T>,
    pub rank: usize,
    pub scaling: f64,
}

/// `y = x·Wᵀ + b`, optionally with a LoRA adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `out × in`
    pub w: Param<T>,
    pub b: Option<Param<T>>,
    pub lora: Option<LoraAdapter<T>>,
    in_dim: usize,
    out_dim: usize,
}

#[derive(Debug, Clone)]
pub struct LinearCache<T> {
    x: Tensor<T>,
    /// `x·Aᵀ`, present with an adapter.
    xa: Option<Vec<T>>,
}

impl<T: Scalar> Linear<T> {
    /// Weights `N(0, 1/in)`, zero bias.
    pub fn new<R: Rng + ?Sized>(name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut R) -> Self {
        let w = Param::normal(format!("{name}.weight"), &[out_dim, in_dim], 1.0 / (in_dim as f64).sqrt(), rng);
        let b = bias.then(|| Param::zeros(format!("{name}.bias"), &[out_dim]));
        Self {
            w,
            b,
            lora: None,
            in_dim,
            out_dim,
        }
    }

    pub fn from_weights(name: &str, w: Tensor<T>, b: Option<Tensor<T>>) -> Result<Self, NnError> {
        let (out_dim, in_dim) = w.dims2();
        if let Some(b) = &b {
            b.expect_shape(&[out_dim])?;
        }
        Ok(Self {
            w: Param::new(format!("{name}.weight"), w.reshape(&[out_dim, in_dim])?),
            b: b.map(|b| Param::new(format!("{name}.bias"), b)),
            lora: None,
            in_dim,
            out_dim,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn base_name(&self) -> &str {
        self.w.name.strip_suffix(".weight").unwrap_or(&self.w.name)
    }

    /// Attaches an adapter and freezes the base weight and bias. `A` starts
    /// uniform in `±1/√in`, `B` at zero, so the output is unchanged.
    pub fn wrap_lora<R: Rng + ?Sized>(&mut self, rank: usize, scaling: f64, rng: &mut R) -> Result<(), NnError> {
        if rank == 0 || rank > self.in_dim.min(self.out_dim) {
            return Err(NnError::RankTooLarge {
                rank,
                rows: self.out_dim,
                cols: self.in_dim,
            });
        }
        let base = self.base_name().to_string();
        let a = Param::uniform(format!("{base}.lora_a"), &[rank, self.in_dim], 1.0 / (self.in_dim as f64).sqrt(), rng);
        let b = Param::zeros(format!("{base}.lora_b"), &[self.out_dim, rank]);
        self.w.trainable = false;
        if let Some(bias) = &mut self.b {
            bias.trainable = false;
        }
        self.lora = Some(LoraAdapter { a, b, rank, scaling });
        Ok(())
    }

    /// `W0 + scaling·B·A`, or `W0` without an adapter.
    pub fn effective_weight(&self) -> Tensor<T> {
        let mut w = self.w.value.clone();
        if let Some(l) = &self.lora {
            let s = T::of(l.scaling);
            let mut ba = vec![T::zero(); self.out_dim * self.in_dim];
            matmul_nn_acc(&mut ba, l.b.value.data(), l.a.value.data(), self.out_dim, l.rank, self.in_dim);
            for (x, d) in w.data_mut().iter_mut().zip(ba) {
                *x += s * d;
            }
        }
        w
    }

    /// Folds the adapter into the base weight and drops it.
    pub fn merged(&self) -> Linear<T> {
        let mut out = self.clone();
        out.w.value = self.effective_weight();
        out.lora = None;
        out
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize, NnError> {
        let (n, c) = x.dims2();
        if c != self.in_dim {
            return Err(NnError::Shape {
                expected: vec![n, self.in_dim],
                got: x.shape().to_vec(),
            });
        }
        Ok(n)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, LinearCache<T>), NnError> {
        let n = self.check_input(x)?;
        let mut y = vec![T::zero(); n * self.out_dim];
        matmul_nt_acc(&mut y, x.data(), self.w.value.data(), n, self.in_dim, self.out_dim);
        if let Some(b) = &self.b {
            for row in y.chunks_exact_mut(self.out_dim) {
                for (v, bi) in row.iter_mut().zip(b.value.data()) {
                    *v += *bi;
                }
            }
        }
        let mut xa = None;
        if let Some(l) = &self.lora {
            let mut t = vec![T::zero(); n * l.rank];
            matmul_nt_acc(&mut t, x.data(), l.a.value.data(), n, self.in_dim, l.rank);
            let s = T::of(l.scaling);
            let scaled: Vec<T> = t.iter().map(|v| *v * s).collect();
            matmul_nt_acc(&mut y, &scaled, l.b.value.data(), n, l.rank, self.out_dim);
            xa = Some(t);
        }
        let y = Tensor::from_vec(&[n, self.out_dim], y)?;
        Ok((y, LinearCache { x: x.clone(), xa }))
    }

    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        Ok(self.forward(x)?.0)
    }

    /// Accumulates parameter gradients and returns `∂L/∂x`.
    pub fn backward(&mut self, cache: &LinearCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (n, _) = cache.x.dims2();
        let (i, o) = (self.in_dim, self.out_dim);
        let x = cache.x.data();
        let dyd = dy.data();
        if self.w.trainable {
            let mut gw = vec![T::zero(); o * i];
            matmul_tn_acc(&mut gw, dyd, x, n, o, i);
            self.w.accumulate_all(&gw);
        }
        if let Some(b) = &mut self.b {
            if b.trainable {
                let mut gb = vec![T::zero(); o];
                for row in dyd.chunks_exact(o) {
                    for (g, d) in gb.iter_mut().zip(row) {
                        *g += *d;
                    }
                }
                b.accumulate_all(&gb);
            }
        }
        let mut dx = vec![T::zero(); n * i];
        matmul_nn_acc(&mut dx, dyd, self.w.value.data(), n, o, i);
        if let (Some(l), Some(xa)) = (&mut self.lora, &cache.xa) {
            let r = l.rank;
            let s = T::of(l.scaling);
            // y += s · (x Aᵀ) Bᵀ
            let mut dyb = vec![T::zero(); n * r];
            matmul_nn_acc(&mut dyb, dyd, l.b.value.data(), n, o, r);
            dyb.iter_mut().for_each(|v| *v *= s);
            if l.b.trainable {
                let mut gb = vec![T::zero(); o * r];
                matmul_tn_acc(&mut gb, dyd, xa, n, o, r);
                gb.iter_mut().for_each(|v| *v *= s);
                l.b.accumulate_all(&gb);
            }
            if l.a.trainable {
                let mut ga = vec![T::zero(); r * i];
                matmul_tn_acc(&mut ga, &dyb, x, n, r, i);
                l.a.accumulate_all(&ga);
            }
            matmul_nn_acc(&mut dx, &dyb, l.a.value.data(), n, r, i);
        }
        Tensor::from_vec(cache.x.shape(), dx).expect("input shape")
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = vec![&self.w];
        v.extend(self.b.as_ref());
        if let Some(l) = &self.lora {
            v.push(&l.a);
            v.push(&l.b);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = vec![&mut self.w];
        v.extend(self.b.as_mut());
        if let Some(l) = &mut self.lora {
            v.push(&mut l.a);
            v.push(&mut l.b);
        }
        v
    }
}
