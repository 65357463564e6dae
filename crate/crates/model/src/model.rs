//! Prompt prefix + series embedding + causal embedding, a frozen backbone
//! with adapters, and a linear read-out on the series positions.

use std::io::{Read, Write};

use cmts_core::{MaskedSeries, Scalar};
use cmts_nn::embedding::Embedding;
use cmts_nn::linear::LinearCache;
use cmts_nn::transformer::TransformerCache;
use cmts_nn::{
    read_checkpoint, write_checkpoint, AttentionMode, CheckpointError, Linear, Module, NnError, Param, Tensor,
    Transformer, TransformerConfig,
};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgp::{Adjacency, Dgp, DgpCache, DgpConfig};
use crate::tokenizer::Tokenizer;

/// Which optional inputs feed the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Series embedding only.
    None,
    /// Prompt prefix, no causal branch.
    Prompt,
    /// Causal branch, no prompt prefix.
    Causal,
    #[default]
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::None, Ablation::Prompt, Ablation::Causal, Ablation::Full];

    pub fn uses_prompt(self) -> bool {
        matches!(self, Ablation::Prompt | Ablation::Full)
    }

    pub fn uses_causal(self) -> bool {
        matches!(self, Ablation::Causal | Ablation::Full)
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Ablation::None),
            "prompt" => Ok(Ablation::Prompt),
            "causal" => Ok(Ablation::Causal),
            "full" => Ok(Ablation::Full),
            other => Err(format!("unknown ablation `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_vars: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub attention: AttentionMode,
    pub dropout: f64,
    pub max_seq_len: usize,
    /// Zero leaves the backbone fully frozen without adapters.
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub token_std: f64,
    pub vocab_size: usize,
    pub dgp: DgpConfig,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_vars: 6,
            hidden: 32,
            layers: 2,
            heads: 4,
            ffn: 64,
            attention: AttentionMode::Causal,
            dropout: 0.0,
            max_seq_len: 256,
            lora_rank: 8,
            lora_alpha: 16.0,
            token_std: 0.1,
            vocab_size: Tokenizer::default().vocab_size(),
            dgp: DgpConfig::default(),
            ablation: Ablation::Full,
        }
    }
}

impl ModelConfig {
    pub fn backbone(&self) -> TransformerConfig {
        TransformerConfig {
            layers: self.layers,
            heads: self.heads,
            hidden: self.hidden,
            ffn: self.ffn,
            attention: self.attention,
            dropout: self.dropout,
            max_seq_len: self.max_seq_len,
            positional: true,
        }
    }

    pub fn causal_dim(&self) -> usize {
        self.dgp.causal_dim_for(self.hidden)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_vars == 0 || self.vocab_size == 0 || self.dgp.node_dim == 0 || self.causal_dim() == 0 {
            return Err(ModelError::Config("n_vars, vocab_size and DGP widths must be positive".into()));
        }
        if self.lora_rank > 0 && !(self.lora_alpha.is_finite() && self.lora_alpha > 0.0) {
            return Err(ModelError::Config("lora_alpha must be positive".into()));
        }
        self.backbone().validate()?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("series has {got} variables, model expects {expected}")]
    VariableCount { expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint header: {0}")]
    Header(String),
}

/// One sequence to run through the model.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a, T> {
    pub prompt: &'a [usize],
    /// `L × F`, timestep-major.
    pub series: &'a Tensor<T>,
    pub adjacency: &'a Adjacency,
}

/// Converts a variable-major masked series into the `L × F` model layout.
pub fn series_tensor<T: Scalar>(x: &MaskedSeries<T>) -> Tensor<T> {
    let (f, l) = x.shape();
    let v = x.values();
    Tensor::from_fn(&[l, f], |i| v[(i % f) * l + i / f])
}

#[derive(Debug, Clone)]
pub struct ModelCache<T> {
    prompt: Vec<usize>,
    ts: LinearCache<T>,
    causal: Option<(DgpCache<T>, LinearCache<T>)>,
    backbone: TransformerCache<T>,
    out: LinearCache<T>,
    l_txt: usize,
    l_ts: usize,
}

impl<T> ModelCache<T> {
    pub fn prompt_len(&self) -> usize {
        self.l_txt
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmModel<T> {
    pub cfg: ModelConfig,
    pub token: Embedding<T>,
    pub ts_embed: Linear<T>,
    pub dgp: Dgp<T>,
    pub causal_proj: Linear<T>,
    pub backbone: Transformer<T>,
    pub out_proj: Linear<T>,
}

impl<T: Scalar> CmModel<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        cfg.validate()?;
        let d = cfg.hidden;
        let dc = cfg.causal_dim();
        let mut token = Embedding::new("token", cfg.vocab_size, d, cfg.token_std, rng);
        token.set_trainable(false);
        let ts_embed = Linear::new("ts_embed", cfg.n_vars, d, true, rng);
        let dgp = Dgp::new("dgp", cfg.n_vars, &cfg.dgp, dc, rng);
        let causal_proj = Linear::new("causal_proj", dc, d, true, rng);
        let mut backbone = Transformer::new("backbone", &cfg.backbone(), rng)?;
        if cfg.lora_rank > 0 {
            backbone.wrap_lora(cfg.lora_rank, cfg.lora_alpha / cfg.lora_rank as f64, rng)?;
        } else {
            backbone.set_trainable(false);
        }
        let out_proj = Linear::new("out_proj", d, cfg.n_vars, true, rng);
        Ok(Self {
            cfg: cfg.clone(),
            token,
            ts_embed,
            dgp,
            causal_proj,
            backbone,
            out_proj,
        })
    }

    pub fn ablation(&self) -> Ablation {
        self.cfg.ablation
    }

    /// Switches which branches feed the backbone without touching weights.
    pub fn set_ablation(&mut self, ablation: Ablation) {
        self.cfg.ablation = ablation;
    }

    pub fn embed_prompt(&self, ids: &[usize]) -> Result<Tensor<T>, NnError> {
        self.token.forward(ids)
    }

    pub fn embed_series(&self, series: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        self.check_series(series)?;
        Ok(self.ts_embed.apply(series)?)
    }

    /// `E′_causal` for one sequence, `L × D_hidden`.
    pub fn causal_embedding(&self, series: &Tensor<T>, adj: &Adjacency) -> Result<Tensor<T>, ModelError> {
        self.check_series(series)?;
        let e = self.dgp.apply(series, adj)?;
        Ok(self.causal_proj.apply(&e)?)
    }

    fn check_series(&self, series: &Tensor<T>) -> Result<(), ModelError> {
        let (_, f) = series.dims2();
        if f != self.cfg.n_vars {
            return Err(ModelError::VariableCount {
                expected: self.cfg.n_vars,
                got: f,
            });
        }
        Ok(())
    }

    /// Backbone input `[E_txt; E_ts + E′_causal]` along with the caches the
    /// backward pass needs.
    #[allow(clippy::type_complexity)]
    fn fused_input(
        &self,
        input: &ModelInput<'_, T>,
    ) -> Result<(Tensor<T>, LinearCache<T>, Option<(DgpCache<T>, LinearCache<T>)>, usize), ModelError> {
        self.check_series(input.series)?;
        let (mut fused, ts) = self.ts_embed.forward(input.series)?;
        let causal = if self.cfg.ablation.uses_causal() {
            let (e, dc) = self.dgp.forward(input.series, input.adjacency)?;
            let (ep, pc) = self.causal_proj.forward(&e)?;
            fused.add_assign(&ep);
            Some((dc, pc))
        } else {
            None
        };
        let (x, l_txt) = if self.cfg.ablation.uses_prompt() && !input.prompt.is_empty() {
            let txt = self.token.forward(input.prompt)?;
            (Tensor::concat_rows(&[&txt, &fused])?, input.prompt.len())
        } else {
            (fused, 0)
        };
        Ok((x, ts, causal, l_txt))
    }

    /// Fused backbone input for inspection.
    pub fn fuse(&self, input: &ModelInput<'_, T>) -> Result<Tensor<T>, ModelError> {
        Ok(self.fused_input(input)?.0)
    }

    /// Backbone hidden states of every position, `(L_txt + L_ts) × D_hidden`.
    pub fn hidden_states(&self, input: &ModelInput<'_, T>) -> Result<Tensor<T>, ModelError> {
        let x = self.fuse(input)?;
        Ok(self.backbone.apply(&x)?)
    }

    /// Read-out of the series positions of backbone output `h`.
    pub fn project(&self, h: &Tensor<T>, l_txt: usize) -> Result<Tensor<T>, ModelError> {
        let (n, _) = h.dims2();
        Ok(self.out_proj.apply(&h.slice_rows(l_txt, n))?)
    }

    /// Returns `Ŷ` as `L_ts × F`. Dropout is active only when `rng` is given.
    pub fn forward(
        &self,
        input: &ModelInput<'_, T>,
        rng: Option<&mut (dyn RngCore + 'static)>,
    ) -> Result<(Tensor<T>, ModelCache<T>), ModelError> {
        let (x, ts, causal, l_txt) = self.fused_input(input)?;
        let (h, backbone) = self.backbone.forward(&x, rng)?;
        let (n, _) = h.dims2();
        let (y, out) = self.out_proj.forward(&h.slice_rows(l_txt, n))?;
        if !y.all_finite() {
            return Err(NnError::NonFinite("out_proj".into()).into());
        }
        Ok((
            y,
            ModelCache {
                prompt: if l_txt > 0 { input.prompt.to_vec() } else { Vec::new() },
                ts,
                causal,
                backbone,
                out,
                l_txt,
                l_ts: n - l_txt,
            },
        ))
    }

    pub fn predict(&self, input: &ModelInput<'_, T>) -> Result<Tensor<T>, ModelError> {
        Ok(self.forward(input, None)?.0)
    }

    /// Accumulates gradients for `dL/dŶ`.
    pub fn backward(&mut self, cache: &ModelCache<T>, dy: &Tensor<T>) {
        let dh_ts = self.out_proj.backward(&cache.out, dy);
        let d = self.cfg.hidden;
        let mut dh = Tensor::zeros(&[cache.l_txt + cache.l_ts, d]);
        dh.data_mut()[cache.l_txt * d..].copy_from_slice(dh_ts.data());
        let dx = self.backbone.backward(&cache.backbone, &dh);
        if cache.l_txt > 0 {
            self.token.backward(&cache.prompt, &dx.slice_rows(0, cache.l_txt));
        }
        let dfused = dx.slice_rows(cache.l_txt, cache.l_txt + cache.l_ts);
        self.ts_embed.backward(&cache.ts, &dfused);
        if let Some((dc, pc)) = &cache.causal {
            let de = self.causal_proj.backward(pc, &dfused);
            self.dgp.backward(dc, &de);
        }
    }

    /// Copy with every adapter folded into its base weight.
    pub fn merged(&self) -> Self {
        let mut m = self.clone();
        m.backbone = self.backbone.merged();
        m
    }

    /// Sets the causal projection to zero, which silences the causal branch.
    pub fn zero_causal_branch(&mut self) {
        self.causal_proj.w.value.fill(T::zero());
        if let Some(b) = &mut self.causal_proj.b {
            b.value.fill(T::zero());
        }
    }

    /// Writes every parameter plus a JSON header holding the configuration
    /// and `meta`.
    pub fn save<W: Write>(&self, w: W, meta: serde_json::Value) -> Result<(), ModelError> {
        let header = serde_json::json!({ "model": self.cfg, "meta": meta });
        write_checkpoint(w, &header, &self.state())?;
        Ok(())
    }

    /// Rebuilds a model from [`CmModel::save`] output.
    pub fn load<R: Read>(r: R) -> Result<(Self, serde_json::Value), ModelError> {
        let ck = read_checkpoint::<T, _>(r)?;
        let cfg: ModelConfig = serde_json::from_value(ck.config.get("model").cloned().unwrap_or_default())
            .map_err(|e| ModelError::Header(e.to_string()))?;
        let mut model = Self::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        // a merged checkpoint has no adapter entries
        let has_lora = ck.tensors.iter().any(|(n, _)| n.ends_with(".lora_a"));
        if !has_lora && cfg.lora_rank > 0 {
            model = model.merged();
        }
        model.load_state(&ck.tensors)?;
        let meta = ck.config.get("meta").cloned().unwrap_or(serde_json::Value::Null);
        Ok((model, meta))
    }
}

impl<T: Scalar> Module<T> for CmModel<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.token.params();
        v.extend(self.ts_embed.params());
        v.extend(self.dgp.params());
        v.extend(self.causal_proj.params());
        v.extend(self.backbone.params());
        v.extend(self.out_proj.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.token.params_mut();
        v.extend(self.ts_embed.params_mut());
        v.extend(self.dgp.params_mut());
        v.extend(self.causal_proj.params_mut());
        v.extend(self.backbone.params_mut());
        v.extend(self.out_proj.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_vars: 3,
            hidden: 8,
            heads: 2,
            ffn: 16,
            layers: 1,
            lora_rank: 2,
            max_seq_len: 64,
            ..Default::default()
        }
    }

    #[test]
    fn output_shape_and_prompt_slice() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m: CmModel<f64> = CmModel::new(&tiny(), &mut rng).unwrap();
        let x = Tensor::from_fn(&[10, 3], |i| (i % 7) as f64 / 7.0);
        let adj = Adjacency::empty(3);
        let input = ModelInput {
            prompt: &[2, 5, 9],
            series: &x,
            adjacency: &adj,
        };
        let y = m.predict(&input).unwrap();
        assert_eq!(y.shape(), &[10, 3]);
        let fused = m.fuse(&input).unwrap();
        assert_eq!(fused.dims2(), (13, 8));
        assert_eq!(fused.slice_rows(0, 3), m.embed_prompt(&[2, 5, 9]).unwrap());
    }

    #[test]
    fn frozen_parts() {
        let m: CmModel<f32> = CmModel::new(&tiny(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for p in m.params() {
            let adapter = p.name.ends_with(".lora_a") || p.name.ends_with(".lora_b");
            let in_backbone = p.name.starts_with("backbone.");
            if p.name.starts_with("token.") || (in_backbone && !adapter) {
                assert!(!p.trainable, "{}", p.name);
            } else {
                assert!(p.trainable, "{}", p.name);
            }
        }
    }

    #[test]
    fn wrong_variable_count() {
        let m: CmModel<f64> = CmModel::new(&tiny(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = Tensor::zeros(&[4, 5]);
        let adj = Adjacency::empty(5);
        let r = m.predict(&ModelInput {
            prompt: &[1],
            series: &x,
            adjacency: &adj,
        });
        assert!(matches!(r, Err(ModelError::VariableCount { expected: 3, got: 5 })));
    }
}
