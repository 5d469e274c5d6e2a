//! A small pre-norm transformer encoder followed by a self-attention
//! refinement step that produces the sentence representation at position 0.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::{AttentionCache, MultiHeadAttention};
use super::vocab::{TokenSequence, Vocab};
use crate::error::{Error, Result};
use crate::nn::{self, gelu, gelu_grad, LayerNorm, LayerNormCache, Linear};
use crate::tensor::{visit_prefixed, visit_prefixed_mut, ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TinyEncoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub refine_heads: usize,
    pub dropout: f64,
}

impl Default for TinyEncoderConfig {
    fn default() -> Self {
        TinyEncoderConfig {
            dim: 64,
            layers: 2,
            heads: 4,
            ff_dim: 256,
            max_len: 128,
            refine_heads: 16,
            dropout: 0.1,
        }
    }
}

impl TinyEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "encoder dim {} must be divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.refine_heads == 0 || !self.dim.is_multiple_of(self.refine_heads) {
            return Err(Error::InvalidConfig(format!(
                "encoder dim {} must be divisible by {} refinement heads",
                self.dim, self.refine_heads
            )));
        }
        if self.max_len == 0 || self.ff_dim == 0 {
            return Err(Error::InvalidConfig("max_len and ff_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl ParamSet for EncoderLayer {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        visit_prefixed("ln1", &self.ln1, f);
        visit_prefixed("attn", &self.attn, f);
        visit_prefixed("ln2", &self.ln2, f);
        visit_prefixed("ff1", &self.ff1, f);
        visit_prefixed("ff2", &self.ff2, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        visit_prefixed_mut("ln1", &mut self.ln1, f);
        visit_prefixed_mut("attn", &mut self.attn, f);
        visit_prefixed_mut("ln2", &mut self.ln2, f);
        visit_prefixed_mut("ff1", &mut self.ff1, f);
        visit_prefixed_mut("ff2", &mut self.ff2, f);
    }
}

impl EncoderLayer {
    fn zeros_like(&self) -> Self {
        EncoderLayer {
            ln1: self.ln1.zeros_like(),
            attn: self.attn.zeros_like(),
            ln2: self.ln2.zeros_like(),
            ff1: self.ff1.zeros_like(),
            ff2: self.ff2.zeros_like(),
        }
    }
}

/// Token embeddings and transformer blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyEncoderParams {
    /// `[vocab, dim]`
    pub token_emb: Tensor,
    pub layers: Vec<EncoderLayer>,
}

impl ParamSet for TinyEncoderParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        f("token_emb", &self.token_emb);
        for (i, layer) in self.layers.iter().enumerate() {
            visit_prefixed(&format!("layers.{i}"), layer, f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("token_emb", &mut self.token_emb);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            visit_prefixed_mut(&format!("layers.{i}"), layer, f);
        }
    }
}

/// Post-encoder self-attention over the final hidden states, followed by
/// layer norm on the position-0 output.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinerParams {
    pub attn: MultiHeadAttention,
    pub ln: LayerNorm,
}

impl ParamSet for RefinerParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        visit_prefixed("attn", &self.attn, f);
        visit_prefixed("ln", &self.ln, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        visit_prefixed_mut("attn", &mut self.attn, f);
        visit_prefixed_mut("ln", &mut self.ln, f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub backbone: TinyEncoderParams,
    pub refiner: RefinerParams,
}

impl ParamSet for EncoderParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        visit_prefixed("backbone", &self.backbone, f);
        visit_prefixed("refiner", &self.refiner, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        visit_prefixed_mut("backbone", &mut self.backbone, f);
        visit_prefixed_mut("refiner", &mut self.refiner, f);
    }
}

impl EncoderParams {
    pub fn new<R: Rng + ?Sized>(config: &TinyEncoderConfig, vocab_size: usize, rng: &mut R) -> Self {
        let d = config.dim;
        let token_emb = Tensor::uniform(&[vocab_size, d], 1.0, rng);
        let layers = (0..config.layers)
            .map(|_| EncoderLayer {
                ln1: LayerNorm::new(d),
                attn: MultiHeadAttention::new(d, config.heads, rng),
                ln2: LayerNorm::new(d),
                ff1: Linear::new(d, config.ff_dim, rng),
                ff2: Linear::new(config.ff_dim, d, rng),
            })
            .collect();
        EncoderParams {
            backbone: TinyEncoderParams { token_emb, layers },
            refiner: RefinerParams {
                attn: MultiHeadAttention::new(d, config.refine_heads, rng),
                ln: LayerNorm::new(d),
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            backbone: TinyEncoderParams {
                token_emb: self.backbone.token_emb.zeros_like(),
                layers: self.backbone.layers.iter().map(EncoderLayer::zeros_like).collect(),
            },
            refiner: RefinerParams {
                attn: self.refiner.attn.zeros_like(),
                ln: self.refiner.ln.zeros_like(),
            },
        }
    }
}

/// Fixed sinusoidal position table, `[max_len, dim]`.
pub fn sinusoidal_table(max_len: usize, dim: usize) -> Vec<f64> {
    let mut table = vec![0.0; max_len * dim];
    for pos in 0..max_len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            table[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    table
}

#[derive(Debug, Clone)]
struct LayerCache {
    ln1: Vec<LayerNormCache>,
    attn: AttentionCache,
    ln2: Vec<LayerNormCache>,
    normed2: Vec<f64>,
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
}

/// Activations recorded by a forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    ids: Vec<usize>,
    layers: Vec<LayerCache>,
    refine: AttentionCache,
    refine_ln: LayerNormCache,
    dropout: Option<Vec<f64>>,
}

impl EncoderCache {
    /// Attention probabilities of the refinement step for the position-0
    /// query, one row of length `n` per head.
    pub fn refine_attention(&self) -> &[f64] {
        &self.refine.probs
    }

    /// Attention probabilities of layer `l`, `[heads, n, n]`.
    pub fn layer_attention(&self, l: usize) -> &[f64] {
        &self.layers[l].attn.probs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyEncoder {
    pub config: TinyEncoderConfig,
    pub vocab: Vocab,
    pub params: EncoderParams,
    positions: Vec<f64>,
}

impl TinyEncoder {
    pub fn new<R: Rng + ?Sized>(config: TinyEncoderConfig, vocab: Vocab, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = EncoderParams::new(&config, vocab.len(), rng);
        Ok(Self::with_params(config, vocab, params))
    }

    pub fn with_params(config: TinyEncoderConfig, vocab: Vocab, params: EncoderParams) -> Self {
        TinyEncoder {
            positions: sinusoidal_table(config.max_len, config.dim),
            config,
            vocab,
            params,
        }
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        self.vocab.tokenize(text, self.config.max_len)
    }

    /// Runs the encoder. `dropout_mask` enables training-mode dropout on the
    /// output with the given scale factors.
    pub fn forward(&self, seq: &TokenSequence, dropout_mask: Option<Vec<f64>>) -> Result<(Vec<f64>, EncoderCache)> {
        let d = self.config.dim;
        let n = seq.ids.len();
        if n == 0 || n > self.config.max_len || seq.attention_mask.len() != n {
            return Err(Error::DimensionMismatch {
                what: "token sequence",
                expected: self.config.max_len,
                got: n,
            });
        }
        let vocab_size = self.params.backbone.token_emb.shape[0];
        let mut x = Vec::with_capacity(n * d);
        for (pos, &id) in seq.ids.iter().enumerate() {
            if id >= vocab_size {
                return Err(Error::DimensionMismatch {
                    what: "token id",
                    expected: vocab_size,
                    got: id,
                });
            }
            let emb = &self.params.backbone.token_emb.data[id * d..(id + 1) * d];
            let pe = &self.positions[pos * d..(pos + 1) * d];
            x.extend(emb.iter().zip(pe).map(|(a, b)| a + b));
        }

        let mask = &seq.attention_mask;
        let mut caches = Vec::with_capacity(self.params.backbone.layers.len());
        for layer in &self.params.backbone.layers {
            let (normed1, ln1) = rowwise_ln(&layer.ln1, &x, n);
            let (attn_out, attn) = layer.attn.forward(&normed1, n, mask, n);
            for (a, b) in x.iter_mut().zip(&attn_out) {
                *a += b;
            }
            let (normed2, ln2) = rowwise_ln(&layer.ln2, &x, n);
            let ff_pre = layer.ff1.forward_rows(&normed2, n);
            let ff_act: Vec<f64> = ff_pre.iter().map(|&v| gelu(v)).collect();
            let ff_out = layer.ff2.forward_rows(&ff_act, n);
            for (a, b) in x.iter_mut().zip(&ff_out) {
                *a += b;
            }
            caches.push(LayerCache {
                ln1,
                attn,
                ln2,
                normed2,
                ff_pre,
                ff_act,
            });
        }

        let (refined, refine) = self.params.refiner.attn.forward(&x, n, mask, 1);
        let (normed, refine_ln) = self.params.refiner.ln.forward(&refined);
        let out = nn::apply_mask(&normed, dropout_mask.as_deref());
        Ok((
            out,
            EncoderCache {
                ids: seq.ids.clone(),
                layers: caches,
                refine,
                refine_ln,
                dropout: dropout_mask,
            },
        ))
    }

    /// Accumulates parameter gradients for upstream `dh` into `grad`.
    pub fn backward(&self, cache: &EncoderCache, dh: &[f64], grad: &mut EncoderParams) {
        let d = self.config.dim;
        let n = cache.ids.len();
        let dnormed = nn::apply_mask(dh, cache.dropout.as_deref());
        let drefined = self
            .params
            .refiner
            .ln
            .backward(&cache.refine_ln, &dnormed, &mut grad.refiner.ln);
        let mut dx = self
            .params
            .refiner
            .attn
            .backward(&cache.refine, &drefined, &mut grad.refiner.attn);

        for (l, layer) in self.params.backbone.layers.iter().enumerate().rev() {
            let c = &cache.layers[l];
            let g = &mut grad.backbone.layers[l];
            let dact = layer.ff2.backward_rows(&c.ff_act, &dx, n, &mut g.ff2);
            let dpre: Vec<f64> = dact
                .iter()
                .zip(&c.ff_pre)
                .map(|(da, &p)| da * gelu_grad(p))
                .collect();
            let dnormed2 = layer.ff1.backward_rows(&c.normed2, &dpre, n, &mut g.ff1);
            let dres = rowwise_ln_backward(&layer.ln2, &c.ln2, &dnormed2, &mut g.ln2);
            for (a, b) in dx.iter_mut().zip(&dres) {
                *a += b;
            }
            let dnormed1 = layer.attn.backward(&c.attn, &dx, &mut g.attn);
            let dres = rowwise_ln_backward(&layer.ln1, &c.ln1, &dnormed1, &mut g.ln1);
            for (a, b) in dx.iter_mut().zip(&dres) {
                *a += b;
            }
        }

        let emb = &mut grad.backbone.token_emb.data;
        for (pos, &id) in cache.ids.iter().enumerate() {
            nn::axpy(1.0, &dx[pos * d..(pos + 1) * d], &mut emb[id * d..(id + 1) * d]);
        }
    }
}

fn rowwise_ln(ln: &LayerNorm, x: &[f64], n: usize) -> (Vec<f64>, Vec<LayerNormCache>) {
    let d = ln.dim();
    let mut out = Vec::with_capacity(x.len());
    let mut caches = Vec::with_capacity(n);
    for r in 0..n {
        let (y, c) = ln.forward(&x[r * d..(r + 1) * d]);
        out.extend(y);
        caches.push(c);
    }
    (out, caches)
}

fn rowwise_ln_backward(ln: &LayerNorm, caches: &[LayerNormCache], dy: &[f64], grad: &mut LayerNorm) -> Vec<f64> {
    let d = ln.dim();
    let mut dx = Vec::with_capacity(dy.len());
    for (r, c) in caches.iter().enumerate() {
        dx.extend(ln.backward(c, &dy[r * d..(r + 1) * d], grad));
    }
    dx
}
