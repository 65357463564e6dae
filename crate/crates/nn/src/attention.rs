use cmts_core::Scalar;
use rand::Rng;

use crate::linear::{Linear, LinearCache};
use crate::param::{Module, Param};
use crate::tensor::{dot, NnError, Tensor};

/// Multi-head scaled dot-product self-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention<T> {
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
    heads: usize,
    dim: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    qc: LinearCache<T>,
    kc: LinearCache<T>,
    vc: LinearCache<T>,
    oc: LinearCache<T>,
    /// Head-major `heads × n × dh` copies of the projections.
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `heads × n × n` attention weights.
    p: Vec<T>,
    n: usize,
    causal: bool,
}

/// `[n, heads·dh]` to head-major `[heads, n, dh]`.
fn split_heads<T: Scalar>(x: &[T], n: usize, h: usize, dh: usize) -> Vec<T> {
    let d = h * dh;
    let mut out = vec![T::zero(); n * d];
    for i in 0..n {
        for hh in 0..h {
            out[(hh * n + i) * dh..(hh * n + i + 1) * dh].copy_from_slice(&x[i * d + hh * dh..i * d + (hh + 1) * dh]);
        }
    }
    out
}

fn merge_heads<T: Scalar>(x: &[T], n: usize, h: usize, dh: usize) -> Vec<T> {
    let d = h * dh;
    let mut out = vec![T::zero(); n * d];
    for i in 0..n {
        for hh in 0..h {
            out[i * d + hh * dh..i * d + (hh + 1) * dh].copy_from_slice(&x[(hh * n + i) * dh..(hh * n + i + 1) * dh]);
        }
    }
    out
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * *xi;
    }
}

impl<T: Scalar> MultiHeadAttention<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, dim: usize, heads: usize, rng: &mut R) -> Result<Self, NnError> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(NnError::Config(format!("hidden dim {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(&format!("{name}.q"), dim, dim, true, rng),
            k: Linear::new(&format!("{name}.k"), dim, dim, true, rng),
            v: Linear::new(&format!("{name}.v"), dim, dim, true, rng),
            o: Linear::new(&format!("{name}.o"), dim, dim, true, rng),
            heads,
            dim,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn projections_mut(&mut self) -> [&mut Linear<T>; 4] {
        [&mut self.q, &mut self.k, &mut self.v, &mut self.o]
    }

    pub fn forward(&self, x: &Tensor<T>, causal: bool) -> Result<(Tensor<T>, AttentionCache<T>), NnError> {
        let (n, _) = x.dims2();
        let (d, h) = (self.dim, self.heads);
        let dh = d / h;
        let (qt, qc) = self.q.forward(x)?;
        let (kt, kc) = self.k.forward(x)?;
        let (vt, vc) = self.v.forward(x)?;
        let q = split_heads(qt.data(), n, h, dh);
        let k = split_heads(kt.data(), n, h, dh);
        let v = split_heads(vt.data(), n, h, dh);
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut p = vec![T::zero(); h * n * n];
        let mut ctx = vec![T::zero(); n * d];
        for hh in 0..h {
            let base = hh * n * dh;
            for i in 0..n {
                let qi = &q[base + i * dh..base + (i + 1) * dh];
                let prow = &mut p[(hh * n + i) * n..(hh * n + i + 1) * n];
                let last = if causal { i + 1 } else { n };
                let mut mx = T::neg_infinity();
                for (j, pj) in prow[..last].iter_mut().enumerate() {
                    let s = dot(qi, &k[base + j * dh..base + (j + 1) * dh]) * scale;
                    *pj = s;
                    mx = mx.max(s);
                }
                let mut z = T::zero();
                for pj in &mut prow[..last] {
                    *pj = (*pj - mx).exp();
                    z += *pj;
                }
                let inv = T::one() / z;
                let ci = &mut ctx[base + i * dh..base + (i + 1) * dh];
                for (j, pj) in prow[..last].iter_mut().enumerate() {
                    *pj *= inv;
                    axpy(ci, *pj, &v[base + j * dh..base + (j + 1) * dh]);
                }
            }
        }
        let ctx = Tensor::from_vec(&[n, d], merge_heads(&ctx, n, h, dh))?;
        let (y, oc) = self.o.forward(&ctx)?;
        Ok((
            y,
            AttentionCache {
                qc,
                kc,
                vc,
                oc,
                q,
                k,
                v,
                p,
                n,
                causal,
            },
        ))
    }

    pub fn backward(&mut self, cache: &AttentionCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let n = cache.n;
        let (d, h) = (self.dim, self.heads);
        let dh = d / h;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let dctx = self.o.backward(&cache.oc, dy);
        let dctx = split_heads(dctx.data(), n, h, dh);
        let (q, k, v, p) = (&cache.q, &cache.k, &cache.v, &cache.p);
        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); n * d];
        let mut dv = vec![T::zero(); n * d];
        let mut dp = vec![T::zero(); n];
        for hh in 0..h {
            let base = hh * n * dh;
            for i in 0..n {
                let last = if cache.causal { i + 1 } else { n };
                let prow = &p[(hh * n + i) * n..(hh * n + i) * n + last];
                let gi = &dctx[base + i * dh..base + (i + 1) * dh];
                let mut acc = T::zero();
                for (j, &pj) in prow.iter().enumerate() {
                    let r = base + j * dh..base + (j + 1) * dh;
                    let s = dot(gi, &v[r.clone()]);
                    dp[j] = s;
                    acc += s * pj;
                    axpy(&mut dv[r], pj, gi);
                }
                let qi = &q[base + i * dh..base + (i + 1) * dh];
                let mut dqi = vec![T::zero(); dh];
                for (j, &pj) in prow.iter().enumerate() {
                    let ds = pj * (dp[j] - acc) * scale;
                    let r = base + j * dh..base + (j + 1) * dh;
                    axpy(&mut dqi, ds, &k[r.clone()]);
                    axpy(&mut dk[r], ds, qi);
                }
                axpy(&mut dq[base + i * dh..base + (i + 1) * dh], T::one(), &dqi);
            }
        }
        let shape = [n, d];
        let t = |x: Vec<T>| Tensor::from_vec(&shape, merge_heads(&x, n, h, dh)).expect("shape");
        let mut dx = self.q.backward(&cache.qc, &t(dq));
        dx.add_assign(&self.k.backward(&cache.kc, &t(dk)));
        dx.add_assign(&self.v.backward(&cache.vc, &t(dv)));
        dx
    }
}

impl<T: Scalar> Module<T> for MultiHeadAttention<T> {
    fn params(&self) -> Vec<&Param<T>> {
        [&self.q, &self.k, &self.v, &self.o].into_iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let Self { q, k, v, o, .. } = self;
        [q, k, v, o].into_iter().flat_map(|l| l.params_mut()).collect()
    }
}
