//! Named-tensor checkpoint container.
//!
//! A checkpoint directory holds:
//!
//! * `manifest.json`: format tag, version, element type, the model
//!   configuration and one entry per tensor (name, shape, byte offset,
//!   element count), in parameter visiting order;
//! * `tensors.bin`: the tensors back to back as little-endian f64;
//! * `tfidf.bin`: the fitted vectorizer (see [`TfidfModel::to_bytes`]);
//! * `vocab.json`: the tokenizer vocabulary, for the tiny encoder only.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{EmbeddingTable, EncoderProvider, TinyEncoder, Vocab};
use crate::error::{Error, Result};
use crate::lexical::TfidfModel;
use crate::model::{Classifier, EncoderSpec, HeadOptions, ModelConfig};
use crate::posfeat::PosSource;
use crate::tensor::ParamSet;

pub const FORMAT: &str = "subjfuse-checkpoint";
pub const VERSION: u32 = 1;
pub const DTYPE: &str = "f64-le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub model: ModelConfig,
    pub digest: String,
    pub tensors: Vec<TensorEntry>,
}

/// Serializes tensors in visiting order and returns the blob and its index.
pub fn encode_tensors<P: ParamSet + ?Sized>(params: &P) -> (Vec<u8>, Vec<TensorEntry>) {
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    params.visit(&mut |name, t| {
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape.clone(),
            offset: blob.len(),
            len: t.len(),
        });
        blob.extend_from_slice(&t.to_le_bytes());
    });
    (blob, entries)
}

/// Short content hash of every tensor's name, shape and bytes.
pub fn tensor_digest<P: ParamSet + ?Sized>(params: &P) -> String {
    let mut hasher = Sha256::new();
    params.visit(&mut |name, t| {
        hasher.update(name.as_bytes());
        for s in &t.shape {
            hasher.update((*s as u64).to_le_bytes());
        }
        hasher.update(t.to_le_bytes());
    });
    hasher
        .finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Loads tensors from `blob` into `params`, checking names and shapes.
pub fn decode_tensors<P: ParamSet + ?Sized>(params: &mut P, blob: &[u8], entries: &[TensorEntry]) -> Result<()> {
    let mut i = 0;
    let mut err = None;
    params.visit_mut(&mut |name, t| {
        if err.is_some() {
            return;
        }
        let Some(e) = entries.get(i) else {
            err = Some(Error::ShapeMismatch(format!("checkpoint lacks tensor {name}")));
            return;
        };
        i += 1;
        if e.name != name || e.shape != t.shape || e.len != t.len() {
            err = Some(Error::ShapeMismatch(format!(
                "checkpoint tensor {} {:?} does not match model tensor {name} {:?}",
                e.name, e.shape, t.shape
            )));
            return;
        }
        let end = e.offset + 8 * e.len;
        let Some(bytes) = blob.get(e.offset..end) else {
            err = Some(Error::ShapeMismatch(format!("tensor {name} truncated")));
            return;
        };
        for (v, c) in t.data.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(c.try_into().unwrap());
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if i != entries.len() {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint has {} tensors, model has {i}",
            entries.len()
        )));
    }
    Ok(())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_classifier(model: &Classifier, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (blob, tensors) = encode_tensors(model);
    let manifest = Manifest {
        format: FORMAT.to_string(),
        version: VERSION,
        dtype: DTYPE.to_string(),
        model: model.config.clone(),
        digest: tensor_digest(model),
        tensors,
    };
    write(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    write(&dir.join("tensors.bin"), &blob)?;
    model.tfidf.save(&dir.join("tfidf.bin"))?;
    if let Some(enc) = model.encoder.trainable() {
        enc.vocab.save(&dir.join("vocab.json"))?;
    }
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_slice(&bytes)?;
    if manifest.format != FORMAT || manifest.version != VERSION || manifest.dtype != DTYPE {
        return Err(Error::format(&path, "unsupported checkpoint format"));
    }
    Ok(manifest)
}

/// Loads a classifier. Precomputed-encoder checkpoints need the embedding
/// table; concat-head checkpoints need a POS source.
pub fn load_classifier(dir: &Path, embeddings: Option<EmbeddingTable>, pos: PosSource) -> Result<Classifier> {
    let manifest = read_manifest(dir)?;
    let tfidf = TfidfModel::load(&dir.join("tfidf.bin"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let encoder = match &manifest.model.encoder {
        EncoderSpec::Tiny(cfg) => {
            let vocab = Vocab::load(&dir.join("vocab.json"))?;
            EncoderProvider::TinyTrainable(Box::new(TinyEncoder::new(*cfg, vocab, &mut rng)?))
        }
        EncoderSpec::Precomputed { dim } => {
            let table = embeddings.ok_or_else(|| {
                Error::InvalidConfig("checkpoint uses precomputed embeddings; supply the table".into())
            })?;
            if table.dim() != *dim {
                return Err(Error::DimensionMismatch {
                    what: "embedding table",
                    expected: *dim,
                    got: table.dim(),
                });
            }
            EncoderProvider::Precomputed(table)
        }
    };
    let head = &manifest.model.head;
    let mut model = Classifier::new(
        manifest.model.arch,
        manifest.model.fusion,
        encoder,
        tfidf,
        pos,
        HeadOptions {
            proj_dim: head.proj_dim,
            hidden: head.hidden,
            dropout: head.dropout,
        },
        &mut rng,
    )?;
    let path = dir.join("tensors.bin");
    let blob = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    decode_tensors(&mut model, &blob, &manifest.tensors)?;
    Ok(model)
}
