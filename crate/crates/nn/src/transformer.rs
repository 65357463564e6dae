use cmts_core::Scalar;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionCache, MultiHeadAttention};
use crate::linear::{Linear, LinearCache};
use crate::norm::{LayerNorm, LayerNormCache};
use crate::param::{Module, Param};
use crate::tensor::{NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    Causal,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ffn: usize,
    pub attention: AttentionMode,
    pub dropout: f64,
    pub max_seq_len: usize,
    /// Adds a learned absolute position embedding to the input.
    pub positional: bool,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            hidden: 32,
            ffn: 64,
            attention: AttentionMode::Causal,
            dropout: 0.0,
            max_seq_len: 512,
            positional: true,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(NnError::Config(format!(
                "hidden dim {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.max_seq_len == 0 || self.ffn == 0 {
            return Err(NnError::Config("max_seq_len and ffn must be positive".into()));
        }
        Ok(())
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(GELU_K);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(GELU_K);
    let half = T::of(0.5);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * k * x * x)
}

/// Two-layer MLP with tanh-approximated GELU.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache<T> {
    c1: LinearCache<T>,
    c2: LinearCache<T>,
    pre: Tensor<T>,
}

impl<T: Scalar> FeedForward<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            fc1: Linear::new(&format!("{name}.fc1"), dim, hidden, true, rng),
            fc2: Linear::new(&format!("{name}.fc2"), hidden, dim, true, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, FeedForwardCache<T>), NnError> {
        let (pre, c1) = self.fc1.forward(x)?;
        let act = Tensor::from_vec(pre.shape(), pre.data().iter().map(|v| gelu(*v)).collect())?;
        let (y, c2) = self.fc2.forward(&act)?;
        Ok((y, FeedForwardCache { c1, c2, pre }))
    }

    pub fn backward(&mut self, cache: &FeedForwardCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let mut da = self.fc2.backward(&cache.c2, dy);
        for (g, x) in da.data_mut().iter_mut().zip(cache.pre.data()) {
            *g *= gelu_grad(*x);
        }
        self.fc1.backward(&cache.c1, &da)
    }
}

impl<T: Scalar> Module<T> for FeedForward<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.fc1.params();
        v.extend(self.fc2.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.fc1.params_mut();
        v.extend(self.fc2.params_mut());
        v
    }
}

/// Pre-norm residual block: `x + attn(ln1(x))`, then `+ ffn(ln2(·))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub ln1: LayerNorm<T>,
    pub attn: MultiHeadAttention<T>,
    pub ln2: LayerNorm<T>,
    pub ffn: FeedForward<T>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    l1: LayerNormCache<T>,
    a: AttentionCache<T>,
    l2: LayerNormCache<T>,
    f: FeedForwardCache<T>,
    drop_a: Option<Vec<T>>,
    drop_f: Option<Vec<T>>,
}

fn dropout_mask<T: Scalar>(len: usize, rate: f64, rng: Option<&mut (dyn RngCore + 'static)>) -> Option<Vec<T>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = T::one() / T::of(1.0 - rate);
    Some(
        (0..len)
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect(),
    )
}

fn apply_mask<T: Scalar>(x: &mut Tensor<T>, mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, k) in x.data_mut().iter_mut().zip(m) {
            *v *= *k;
        }
    }
}

impl<T: Scalar> Block<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, cfg: &TransformerConfig, rng: &mut R) -> Result<Self, NnError> {
        Ok(Self {
            ln1: LayerNorm::new(&format!("{name}.ln1"), cfg.hidden),
            attn: MultiHeadAttention::new(&format!("{name}.attn"), cfg.hidden, cfg.heads, rng)?,
            ln2: LayerNorm::new(&format!("{name}.ln2"), cfg.hidden),
            ffn: FeedForward::new(&format!("{name}.ffn"), cfg.hidden, cfg.ffn, rng),
        })
    }

    pub fn forward(
        &self,
        x: &Tensor<T>,
        causal: bool,
        dropout: f64,
        mut rng: Option<&mut (dyn RngCore + 'static)>,
    ) -> Result<(Tensor<T>, BlockCache<T>), NnError> {
        let (h1, l1) = self.ln1.forward(x)?;
        let (mut a, ac) = self.attn.forward(&h1, causal)?;
        let drop_a = dropout_mask(a.len(), dropout, rng.as_deref_mut());
        apply_mask(&mut a, &drop_a);
        let x1 = x.add(&a);
        let (h2, l2) = self.ln2.forward(&x1)?;
        let (mut f, fc) = self.ffn.forward(&h2)?;
        let drop_f = dropout_mask(f.len(), dropout, rng);
        apply_mask(&mut f, &drop_f);
        let y = x1.add(&f);
        Ok((
            y,
            BlockCache {
                l1,
                a: ac,
                l2,
                f: fc,
                drop_a,
                drop_f,
            },
        ))
    }

    pub fn backward(&mut self, cache: &BlockCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let mut df = dy.clone();
        apply_mask(&mut df, &cache.drop_f);
        let dh2 = self.ffn.backward(&cache.f, &df);
        let mut dx1 = dy.add(&self.ln2.backward(&cache.l2, &dh2));
        let mut da = dx1.clone();
        apply_mask(&mut da, &cache.drop_a);
        let dh1 = self.attn.backward(&cache.a, &da);
        dx1.add_assign(&self.ln1.backward(&cache.l1, &dh1));
        dx1
    }
}

impl<T: Scalar> Module<T> for Block<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.ln1.params();
        v.extend(self.attn.params());
        v.extend(self.ln2.params());
        v.extend(self.ffn.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let Self { ln1, attn, ln2, ffn } = self;
        let mut v = ln1.params_mut();
        v.extend(attn.params_mut());
        v.extend(ln2.params_mut());
        v.extend(ffn.params_mut());
        v
    }
}

/// Stack of pre-norm blocks with no final normalization, so a zero-depth
/// stack without positions is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformer<T> {
    pub cfg: TransformerConfig,
    pub pos: Option<Param<T>>,
    pub blocks: Vec<Block<T>>,
}

#[derive(Debug, Clone)]
pub struct TransformerCache<T> {
    blocks: Vec<BlockCache<T>>,
    n: usize,
}

impl<T: Scalar> Transformer<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, cfg: &TransformerConfig, rng: &mut R) -> Result<Self, NnError> {
        cfg.validate()?;
        let pos = cfg
            .positional
            .then(|| Param::normal(format!("{name}.pos"), &[cfg.max_seq_len, cfg.hidden], 0.1, rng));
        let blocks = (0..cfg.layers)
            .map(|i| Block::new(&format!("{name}.block{i}"), cfg, rng))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            pos,
            blocks,
        })
    }

    /// Wraps q/k/v/o of every block with adapters and freezes everything
    /// else in the stack.
    pub fn wrap_lora<R: Rng + ?Sized>(&mut self, rank: usize, scaling: f64, rng: &mut R) -> Result<(), NnError> {
        self.set_trainable(false);
        for b in &mut self.blocks {
            for l in b.attn.projections_mut() {
                l.wrap_lora(rank, scaling, rng)?;
            }
        }
        Ok(())
    }

    /// Copy with every adapter folded into its base weight.
    pub fn merged(&self) -> Self {
        let mut out = self.clone();
        for b in &mut out.blocks {
            for l in b.attn.projections_mut() {
                *l = l.merged();
            }
        }
        out
    }

    /// `x` is `S × D_hidden`; dropout is active only when `rng` is given.
    pub fn forward(
        &self,
        x: &Tensor<T>,
        mut rng: Option<&mut (dyn RngCore + 'static)>,
    ) -> Result<(Tensor<T>, TransformerCache<T>), NnError> {
        let (n, d) = x.dims2();
        if d != self.cfg.hidden {
            return Err(NnError::Shape {
                expected: vec![n, self.cfg.hidden],
                got: x.shape().to_vec(),
            });
        }
        if n > self.cfg.max_seq_len {
            return Err(NnError::SequenceTooLong {
                len: n,
                max: self.cfg.max_seq_len,
            });
        }
        let mut h = x.clone().reshape(&[n, d])?;
        if let Some(p) = &self.pos {
            for (v, e) in h.data_mut().iter_mut().zip(p.value.data()) {
                *v += *e;
            }
        }
        let causal = self.cfg.attention == AttentionMode::Causal;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(&h, causal, self.cfg.dropout, rng.as_deref_mut())?;
            caches.push(c);
            h = y;
        }
        Ok((h, TransformerCache { blocks: caches, n }))
    }

    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        Ok(self.forward(x, None)?.0)
    }

    pub fn backward(&mut self, cache: &TransformerCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let mut g = dy.clone();
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            g = b.backward(c, &g);
        }
        if let Some(p) = &mut self.pos {
            if p.trainable {
                let d = self.cfg.hidden;
                let take = cache.n * d;
                let gd = g.data()[..take].to_vec();
                for (i, v) in gd.into_iter().enumerate() {
                    p.accumulate(i, v);
                }
            }
        }
        g
    }
}

impl<T: Scalar> Module<T> for Transformer<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.pos.iter().collect();
        for b in &self.blocks {
            v.extend(b.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = self.pos.iter_mut().collect();
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_depth_is_identity() {
        let cfg = TransformerConfig {
            layers: 0,
            positional: false,
            ..Default::default()
        };
        let t = Transformer::<f64>::new("bb", &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = Tensor::from_fn(&[5, 32], |i| i as f64 * 0.01);
        assert_eq!(t.apply(&x).unwrap(), x);
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for x in [-3.0, -0.5, 0.0, 0.7, 2.5f64] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn overlong_sequence_rejected() {
        let cfg = TransformerConfig {
            max_seq_len: 4,
            ..Default::default()
        };
        let t = Transformer::<f32>::new("bb", &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = Tensor::zeros(&[5, 32]);
        assert!(matches!(t.apply(&x), Err(NnError::SequenceTooLong { .. })));
    }
}
