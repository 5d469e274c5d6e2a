//! Character n-gram TF-IDF vectorizer.
//!
//! Weighting is raw term count times smoothed idf `ln((1+N)/(1+df)) + 1`,
//! followed by L2 normalization. Whitespace is part of the character stream.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;

const MAGIC: &[u8; 8] = b"SFTFIDF\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TfidfConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub max_features: usize,
    pub min_df: usize,
    pub lowercase: bool,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        TfidfConfig {
            n_min: 3,
            n_max: 7,
            max_features: 3000,
            min_df: 2,
            lowercase: true,
        }
    }
}

impl TfidfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_min < 1 || self.n_min > self.n_max {
            return Err(Error::InvalidConfig(format!(
                "n-gram range {}..={} is invalid",
                self.n_min, self.n_max
            )));
        }
        if self.max_features < 1 || self.min_df < 1 {
            return Err(Error::InvalidConfig(
                "max_features and min_df must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub dim: usize,
}

impl SparseVector {
    pub fn zeros(dim: usize) -> Self {
        SparseVector {
            indices: Vec::new(),
            values: Vec::new(),
            dim,
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] = v;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    pub config: TfidfConfig,
    /// Feature strings in index order.
    pub features: Vec<String>,
    pub idf: Vec<f64>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TfidfConfig,
    features: Vec<String>,
}

/// Counts every contiguous substring of `n_min..=n_max` Unicode scalars.
pub fn extract_ngrams(
    text: &str,
    n_min: usize,
    n_max: usize,
    lowercase: bool,
) -> BTreeMap<String, usize> {
    let chars: Vec<char> = if lowercase {
        text.to_lowercase().chars().collect()
    } else {
        text.chars().collect()
    };
    let mut out = BTreeMap::new();
    for n in n_min..=n_max {
        if n == 0 || chars.len() < n {
            continue;
        }
        for window in chars.windows(n) {
            *out.entry(window.iter().collect::<String>()).or_insert(0) += 1;
        }
    }
    out
}

pub fn fit_vectorizer<S: AsRef<str> + Sync>(texts: &[S], config: TfidfConfig) -> Result<TfidfModel> {
    fit_vectorizer_with(texts, config, Execution::default())
}

pub fn fit_vectorizer_with<S: AsRef<str> + Sync>(
    texts: &[S],
    config: TfidfConfig,
    exec: Execution,
) -> Result<TfidfModel> {
    config.validate()?;
    if texts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let per_doc = exec.map(texts, |t| {
        extract_ngrams(t.as_ref(), config.n_min, config.n_max, config.lowercase)
    });

    // merged in document order
    let mut stats: HashMap<&str, (usize, usize)> = HashMap::new();
    for doc in &per_doc {
        for (gram, &count) in doc {
            let entry = stats.entry(gram.as_str()).or_insert((0, 0));
            entry.0 += 1;
            entry.1 += count;
        }
    }

    let mut candidates: Vec<(&str, usize, usize)> = stats
        .into_iter()
        .filter(|(_, (df, _))| *df >= config.min_df)
        .map(|(g, (df, total))| (g, df, total))
        .collect();
    candidates.sort_unstable_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(b.0)));
    candidates.truncate(config.max_features);
    candidates.sort_unstable_by(|a, b| a.0.cmp(b.0));

    let n_docs = texts.len() as f64;
    let features: Vec<String> = candidates.iter().map(|c| c.0.to_string()).collect();
    let idf = candidates
        .iter()
        .map(|&(_, df, _)| ((1.0 + n_docs) / (1.0 + df as f64)).ln() + 1.0)
        .collect();
    Ok(TfidfModel::from_parts(config, features, idf))
}

impl TfidfModel {
    fn from_parts(config: TfidfConfig, features: Vec<String>, idf: Vec<f64>) -> Self {
        let index = features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i))
            .collect();
        TfidfModel {
            config,
            features,
            idf,
            index,
        }
    }

    /// Feature count `k`.
    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn feature_index(&self, gram: &str) -> Option<usize> {
        self.index.get(gram).copied()
    }

    pub fn transform(&self, text: &str) -> SparseVector {
        let grams = extract_ngrams(
            text,
            self.config.n_min,
            self.config.n_max,
            self.config.lowercase,
        );
        let mut entries: Vec<(usize, f64)> = grams
            .iter()
            .filter_map(|(g, &c)| self.feature_index(g).map(|i| (i, c as f64 * self.idf[i])))
            .collect();
        entries.sort_unstable_by_key(|e| e.0);
        let norm = entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
        let (indices, values) = if norm > 0.0 {
            entries.into_iter().map(|(i, v)| (i, v / norm)).unzip()
        } else {
            (Vec::new(), Vec::new())
        };
        SparseVector {
            indices,
            values,
            dim: self.dim(),
        }
    }

    pub fn transform_batch<S: AsRef<str> + Sync>(&self, texts: &[S], exec: Execution) -> Vec<SparseVector> {
        exec.map(texts, |t| self.transform(t.as_ref()))
    }

    /// Container layout: 8-byte magic `SFTFIDF\0`, u32 LE version, u64 LE
    /// header length, JSON header (config and feature list in index order),
    /// then `k` idf values as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            config: self.config,
            features: self.features.clone(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + 8 * self.idf.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.idf {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(path, msg);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a TF-IDF model file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        let tail = &body[hlen..];
        let k = header.features.len();
        if tail.len() != 8 * k {
            return Err(bad("idf block does not match vocabulary size"));
        }
        let idf = tail
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        header.config.validate()?;
        Ok(TfidfModel::from_parts(header.config, header.features, idf))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        TfidfModel::from_bytes(&bytes, path)
    }
}
