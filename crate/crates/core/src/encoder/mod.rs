//! Sentence encoders producing the contextual representation `h` of size `d`.
//!
//! Two providers exist: a trainable tiny transformer with a self-attention
//! refinement step, and a read-only table of precomputed vectors keyed by
//! sentence id (for vectors exported from an external backbone).

mod attention;
mod tiny;
mod vocab;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;

pub use attention::{AttentionCache, MultiHeadAttention};
pub use tiny::{
    sinusoidal_table, EncoderCache, EncoderLayer, EncoderParams, RefinerParams, TinyEncoder,
    TinyEncoderConfig, TinyEncoderParams,
};
pub use vocab::{build_vocab, TokenSequence, Vocab, CLS, PAD, UNK};

use crate::corpus::LabeledSentence;
use crate::error::{Error, Result};
use crate::nn::dropout_mask;

/// Precomputed sentence vectors, one per sentence id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    rows: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            rows: HashMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "embedding",
                expected: self.dim,
                got: vector.len(),
            });
        }
        let id = id.into();
        if self.rows.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.rows.insert(id, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.rows
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    }

    /// Reads `sentence_id<TAB>v1,v2,...,vd` lines. A leading header line whose
    /// first field is `sentence_id` is skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table: Option<EmbeddingTable> = None;
        for (i, line) in content.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() || (i == 0 && line.starts_with("sentence_id\t")) {
                continue;
            }
            let (id, values) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(path, format!("line {}: missing tab", i + 1)))?;
            let vector = values
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(path, format!("line {}: non-finite value", i + 1)));
            }
            table
                .get_or_insert_with(|| EmbeddingTable::new(vector.len()))
                .insert(id, vector)?;
        }
        table.ok_or_else(|| Error::format(path, "no embeddings"))
    }
}

/// What an encoder consumes for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderInput {
    Tokens(TokenSequence),
    Id(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderProvider {
    TinyTrainable(Box<TinyEncoder>),
    Precomputed(EmbeddingTable),
}

impl EncoderProvider {
    pub fn dim(&self) -> usize {
        match self {
            EncoderProvider::TinyTrainable(enc) => enc.dim(),
            EncoderProvider::Precomputed(table) => table.dim(),
        }
    }

    pub fn prepare(&self, sentence: &LabeledSentence) -> EncoderInput {
        match self {
            EncoderProvider::TinyTrainable(enc) => EncoderInput::Tokens(enc.tokenize(&sentence.text)),
            EncoderProvider::Precomputed(_) => EncoderInput::Id(sentence.sentence_id.clone()),
        }
    }

    pub fn trainable(&self) -> Option<&TinyEncoder> {
        match self {
            EncoderProvider::TinyTrainable(enc) => Some(enc),
            EncoderProvider::Precomputed(_) => None,
        }
    }

    pub fn trainable_mut(&mut self) -> Option<&mut TinyEncoder> {
        match self {
            EncoderProvider::TinyTrainable(enc) => Some(enc),
            EncoderProvider::Precomputed(_) => None,
        }
    }

    /// Encodes one sentence. Passing an RNG enables training-mode dropout.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        input: &EncoderInput,
        train_rng: Option<&mut R>,
    ) -> Result<(Vec<f64>, Option<EncoderCache>)> {
        match (self, input) {
            (EncoderProvider::TinyTrainable(enc), EncoderInput::Tokens(seq)) => {
                let mask = train_rng.map(|rng| dropout_mask(enc.dim(), enc.config.dropout, rng));
                let (h, cache) = enc.forward(seq, mask)?;
                Ok((h, Some(cache)))
            }
            (EncoderProvider::Precomputed(table), EncoderInput::Id(id)) => Ok((table.get(id)?.to_vec(), None)),
            (EncoderProvider::TinyTrainable(_), EncoderInput::Id(id)) => Err(Error::MissingEmbedding(id.clone())),
            (EncoderProvider::Precomputed(_), EncoderInput::Tokens(_)) => {
                Err(Error::InvalidConfig("precomputed encoder needs sentence ids".into()))
            }
        }
    }

    /// Parameter gradients for upstream `dh`; `None` for the precomputed
    /// provider, which has no trainable tensors.
    pub fn encode_backward(&self, cache: Option<&EncoderCache>, dh: &[f64]) -> Result<Option<EncoderParams>> {
        match self {
            EncoderProvider::Precomputed(_) => Ok(None),
            EncoderProvider::TinyTrainable(enc) => {
                let cache = cache.ok_or(Error::NoRecordedForward)?;
                let mut grad = enc.params.zeros_like();
                enc.backward(cache, dh, &mut grad);
                Ok(Some(grad))
            }
        }
    }
}
