//! Nine-way part-of-speech distributions and their 64-d ReLU projection.
//!
//! The nine categories are positional (index 0..8); their meaning is
//! whatever the upstream tagger used to write the sidecar file.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{self, Linear};

pub const POS_TAGS: usize = 9;
pub const POS_PROJ_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosDistribution {
    pub probs: [f64; POS_TAGS],
}

impl PosDistribution {
    pub fn uniform() -> Self {
        PosDistribution {
            probs: [1.0 / POS_TAGS as f64; POS_TAGS],
        }
    }

    /// Renormalizes non-negative weights to sum to one.
    pub fn from_weights(id: &str, weights: &[f64]) -> Result<Self> {
        if weights.len() != POS_TAGS {
            return Err(Error::WrongArity {
                id: id.to_string(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::NegativeEntry(id.to_string()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroMass(id.to_string()));
        }
        let mut probs = [0.0; POS_TAGS];
        for (p, w) in probs.iter_mut().zip(weights) {
            *p = w / total;
        }
        Ok(PosDistribution { probs })
    }
}

/// Reads `sentence_id<TAB>p1 p2 ... p9` rows.
pub fn load_pos_table(path: &Path) -> Result<HashMap<String, PosDistribution>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pos_table(&content, path)
}

pub fn parse_pos_table(content: &str, path: &Path) -> Result<HashMap<String, PosDistribution>> {
    let mut table = HashMap::new();
    for (i, line) in content.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || (i == 0 && line.starts_with("sentence_id\t")) {
            continue;
        }
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(path, format!("line {}: missing tab", i + 1)))?;
        let weights = rest
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        let dist = PosDistribution::from_weights(id, &weights)?;
        if table.insert(id.to_string(), dist).is_some() {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(table)
}

/// Where POS distributions come from at feature-building time.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum PosSource {
    Table(HashMap<String, PosDistribution>),
    /// Trivial tagger: every sentence gets the uniform distribution.
    #[default]
    Uniform,
}

impl PosSource {
    pub fn lookup(&self, id: &str) -> Result<PosDistribution> {
        match self {
            PosSource::Table(t) => t.get(id).copied().ok_or_else(|| Error::MissingPos(id.to_string())),
            PosSource::Uniform => Ok(PosDistribution::uniform()),
        }
    }
}

pub type PosProjectionParams = Linear;

pub fn init_pos_projection<R: Rng + ?Sized>(rng: &mut R) -> PosProjectionParams {
    Linear::new(POS_TAGS, POS_PROJ_DIM, rng)
}

#[derive(Debug, Clone)]
pub struct PosCache {
    pub pre: Vec<f64>,
}

/// `relu(W p + b)`
pub fn project_pos(dist: &PosDistribution, params: &PosProjectionParams) -> (Vec<f64>, PosCache) {
    let pre = params.forward(&dist.probs);
    (nn::relu(&pre), PosCache { pre })
}

pub fn project_pos_backward(
    cache: Option<&PosCache>,
    dist: &PosDistribution,
    params: &PosProjectionParams,
    upstream: &[f64],
    grad: &mut PosProjectionParams,
) -> Result<()> {
    let cache = cache.ok_or(Error::NoRecordedForward)?;
    let dpre = nn::relu_backward(&cache.pre, upstream);
    params.accumulate_grad(&dist.probs, &dpre, grad);
    Ok(())
}
