//! The full classifier: encoder provider, TF-IDF model, POS source and head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClassLabel, LabeledSentence};
use crate::encoder::{EncoderCache, EncoderInput, EncoderParams, EncoderProvider, TinyEncoderConfig};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fusion::{
    ConcatHeadParams, FusionMode, GatedFusionParams, HeadCache, HeadConfig, HeadInput, HeadParams, Logits,
};
use crate::lexical::{SparseVector, TfidfModel};
use crate::nn::{dropout_mask, Linear};
use crate::posfeat::{PosDistribution, PosSource};
use crate::tensor::{visit_prefixed, visit_prefixed_mut, ParamSet, Tensor};
use crate::train::loss::cross_entropy_with_grad;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Encoder + gated TF-IDF fusion head.
    Gated,
    /// Encoder + POS + TF-IDF concatenation head.
    Concat,
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gated" => Ok(Architecture::Gated),
            "concat" => Ok(Architecture::Concat),
            other => Err(Error::InvalidConfig(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EncoderSpec {
    Tiny(TinyEncoderConfig),
    Precomputed { dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub fusion: FusionMode,
    pub encoder: EncoderSpec,
    pub head: HeadConfig,
}

/// Trainable tensors of a classifier, detached from its frozen parts. Used
/// for gradients and best-checkpoint snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Option<EncoderParams>,
    pub head: HeadParams,
}

fn visit_model<'a>(
    encoder: Option<&'a EncoderParams>,
    head: &'a HeadParams,
    f: &mut dyn FnMut(&str, &'a Tensor),
) {
    if let Some(e) = encoder {
        visit_prefixed("encoder", e, f);
    }
    visit_prefixed("head", head, f);
}

impl ParamSet for ModelParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        visit_model(self.encoder.as_ref(), &self.head, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let Some(e) = &mut self.encoder {
            visit_prefixed_mut("encoder", e, f);
        }
        visit_prefixed_mut("head", &mut self.head, f);
    }
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            encoder: self.encoder.as_ref().map(EncoderParams::zeros_like),
            head: self.head.zeros_like(),
        }
    }
}

/// One sentence with every input feature materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub sentence_id: String,
    pub input: EncoderInput,
    pub tfidf: SparseVector,
    pub pos: Option<PosDistribution>,
    pub label: Option<ClassLabel>,
}

#[derive(Debug, Clone)]
pub struct ExampleCache {
    pub encoder: Option<EncoderCache>,
    pub head: HeadCache,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub config: ModelConfig,
    pub encoder: EncoderProvider,
    pub head: HeadParams,
    pub tfidf: TfidfModel,
    pub pos: PosSource,
}

impl ParamSet for Classifier {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        let enc = self.encoder.trainable().map(|e| &e.params);
        visit_model(enc, &self.head, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let Some(e) = self.encoder.trainable_mut() {
            visit_prefixed_mut("encoder", &mut e.params, f);
        }
        visit_prefixed_mut("head", &mut self.head, f);
    }
}

/// Head sizes and dropout; the encoder and TF-IDF sizes come from the
/// provider and the fitted vectorizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadOptions {
    pub proj_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for HeadOptions {
    fn default() -> Self {
        HeadOptions {
            proj_dim: crate::fusion::TFIDF_PROJ_DIM,
            hidden: crate::fusion::HEAD_HIDDEN,
            dropout: 0.1,
        }
    }
}

impl Classifier {
    /// Builds a freshly initialized head around `encoder` and `tfidf`.
    pub fn new<R: Rng + ?Sized>(
        arch: Architecture,
        fusion: FusionMode,
        encoder: EncoderProvider,
        tfidf: TfidfModel,
        pos: PosSource,
        options: HeadOptions,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&options.dropout) {
            return Err(Error::InvalidConfig("dropout must be in [0, 1)".into()));
        }
        let head_config = HeadConfig {
            encoder_dim: encoder.dim(),
            tfidf_dim: tfidf.dim(),
            proj_dim: options.proj_dim,
            hidden: options.hidden,
            dropout: options.dropout,
        };
        let head = match arch {
            Architecture::Gated => HeadParams::Gated(GatedFusionParams::new(&head_config, fusion, rng)),
            Architecture::Concat => {
                if options.proj_dim != crate::fusion::TFIDF_PROJ_DIM {
                    return Err(Error::InvalidConfig("concat head uses a 128-d TF-IDF projection".into()));
                }
                HeadParams::Concat(ConcatHeadParams::new(&head_config, rng))
            }
        };
        let encoder_spec = match &encoder {
            EncoderProvider::TinyTrainable(enc) => EncoderSpec::Tiny(enc.config),
            EncoderProvider::Precomputed(t) => EncoderSpec::Precomputed { dim: t.dim() },
        };
        Ok(Classifier {
            config: ModelConfig {
                arch,
                fusion: if arch == Architecture::Concat {
                    FusionMode::Ungated
                } else {
                    fusion
                },
                encoder: encoder_spec,
                head: head_config,
            },
            encoder,
            head,
            tfidf,
            pos,
        })
    }

    pub fn snapshot(&self) -> ModelParams {
        ModelParams {
            encoder: self.encoder.trainable().map(|e| e.params.clone()),
            head: self.head.clone(),
        }
    }

    pub fn restore(&mut self, params: &ModelParams) {
        if let (Some(enc), Some(p)) = (self.encoder.trainable_mut(), &params.encoder) {
            enc.params = p.clone();
        }
        self.head = params.head.clone();
    }

    pub fn zero_grads(&self) -> ModelParams {
        self.snapshot().zeros_like()
    }

    /// Swaps in a different TF-IDF model. When the feature count changes the
    /// TF-IDF projection is re-initialized.
    pub fn replace_tfidf<R: Rng + ?Sized>(&mut self, tfidf: TfidfModel, rng: &mut R) {
        let k = tfidf.dim();
        if k != self.tfidf.dim() {
            let proj = self.config.head.proj_dim;
            match &mut self.head {
                HeadParams::Gated(p) => {
                    if let Some(t) = &mut p.tfidf_proj {
                        *t = Linear::new(k, proj, rng);
                    }
                }
                HeadParams::Concat(p) => p.tfidf_proj = Linear::new(k, proj, rng),
            }
            self.config.head.tfidf_dim = k;
        }
        self.tfidf = tfidf;
    }

    pub fn prepare_one(&self, row: &LabeledSentence) -> Result<Example> {
        let pos = match self.config.arch {
            Architecture::Concat => Some(self.pos.lookup(&row.sentence_id)?),
            Architecture::Gated => None,
        };
        Ok(Example {
            sentence_id: row.sentence_id.clone(),
            input: self.encoder.prepare(row),
            tfidf: self.tfidf.transform(&row.text),
            pos,
            label: row.label,
        })
    }

    pub fn prepare(&self, rows: &[LabeledSentence], exec: Execution) -> Result<Vec<Example>> {
        exec.map(rows, |r| self.prepare_one(r)).into_iter().collect()
    }

    /// Forward pass. `dropout_seed` switches on training mode with dropout
    /// masks drawn from a generator seeded by it.
    pub fn forward(&self, ex: &Example, dropout_seed: Option<u64>) -> Result<(Logits, ExampleCache)> {
        self.forward_with_gate(ex, dropout_seed, None)
    }

    pub fn forward_with_gate(
        &self,
        ex: &Example,
        dropout_seed: Option<u64>,
        gate_override: Option<f64>,
    ) -> Result<(Logits, ExampleCache)> {
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let (h, enc_cache) = self.encoder.encode(&ex.input, rng.as_mut())?;
        let head_mask = rng
            .as_mut()
            .map(|r| dropout_mask(self.config.head.hidden, self.config.head.dropout, r));
        let (logits, head_cache) = self.head.forward_with_gate(
            HeadInput {
                h: &h,
                tfidf: &ex.tfidf,
                pos: ex.pos.as_ref(),
            },
            head_mask,
            gate_override,
        )?;
        Ok((
            logits,
            ExampleCache {
                encoder: enc_cache,
                head: head_cache,
                h,
            },
        ))
    }

    pub fn logits(&self, ex: &Example) -> Result<Logits> {
        Ok(self.forward(ex, None)?.0)
    }

    pub fn backward(&self, cache: &ExampleCache, dlogits: &Logits, grad: &mut ModelParams) -> Result<()> {
        let dh = self.head.backward(&cache.head, dlogits, &mut grad.head)?;
        if let (Some(enc), Some(genc)) = (self.encoder.trainable(), &mut grad.encoder) {
            let c = cache.encoder.as_ref().ok_or(Error::NoRecordedForward)?;
            enc.backward(c, &dh, genc);
        }
        Ok(())
    }

    /// Cross-entropy loss of one example times `scale`; the gradient of the
    /// scaled loss is accumulated into `grad`. Returns the unscaled loss.
    pub fn accumulate_example(
        &self,
        ex: &Example,
        dropout_seed: Option<u64>,
        scale: f64,
        grad: &mut ModelParams,
    ) -> Result<f64> {
        let gold = ex
            .label
            .ok_or_else(|| Error::UnlabeledRow(ex.sentence_id.clone()))?
            .index();
        let (logits, cache) = self.forward(ex, dropout_seed)?;
        let (loss, dlogits) = cross_entropy_with_grad(&logits, gold)?;
        self.backward(&cache, &[dlogits[0] * scale, dlogits[1] * scale], grad)?;
        Ok(loss)
    }
}
