//! Independent reference implementations and small model builders shared by
//! the integration tests.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subjfuse::corpus::{ClassLabel, Dataset, LabeledSentence, Split};
use subjfuse::encoder::{build_vocab, EmbeddingTable, EncoderProvider, TinyEncoder, TinyEncoderConfig};
use subjfuse::fusion::FusionMode;
use subjfuse::lexical::{fit_vectorizer, TfidfConfig};
use subjfuse::model::{Architecture, Classifier, Example, HeadOptions};
use subjfuse::posfeat::{PosDistribution, PosSource};
use subjfuse::tensor::ParamSet;
use subjfuse::train::cross_entropy;

// ---------------------------------------------------------------- TF-IDF

/// Vocabulary and dense L2-normalized rows, computed by direct enumeration.
pub struct TfidfOracle {
    pub features: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn grams_of(text: &str, cfg: &TfidfConfig) -> Vec<String> {
    let s = if cfg.lowercase { text.to_lowercase() } else { text.to_string() };
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    for start in 0..chars.len() {
        for n in cfg.n_min..=cfg.n_max {
            if start + n <= chars.len() {
                out.push(chars[start..start + n].iter().collect());
            }
        }
    }
    out
}

pub fn tfidf_oracle(train: &[&str], queries: &[&str], cfg: &TfidfConfig) -> TfidfOracle {
    let n_docs = train.len() as f64;
    let mut df: HashMap<String, usize> = HashMap::new();
    let mut total: HashMap<String, usize> = HashMap::new();
    for doc in train {
        let grams = grams_of(doc, cfg);
        let distinct: HashSet<&String> = grams.iter().collect();
        for g in distinct {
            *df.entry(g.clone()).or_default() += 1;
        }
        for g in &grams {
            *total.entry(g.clone()).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = total
        .into_iter()
        .filter(|(g, _)| df[g] >= cfg.min_df)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    kept.truncate(cfg.max_features);
    let mut features: Vec<String> = kept.into_iter().map(|(g, _)| g).collect();
    features.sort();

    let rows = queries
        .iter()
        .map(|q| {
            let grams = grams_of(q, cfg);
            let mut v: Vec<f64> = features
                .iter()
                .map(|f| {
                    let tf = grams.iter().filter(|g| *g == f).count() as f64;
                    let idf = ((1.0 + n_docs) / (1.0 + df[f] as f64)).ln() + 1.0;
                    tf * idf
                })
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
            v
        })
        .collect();
    TfidfOracle { features, rows }
}

// ---------------------------------------------------------------- metrics

pub fn macro_f1_oracle(preds: &[ClassLabel], golds: &[ClassLabel]) -> f64 {
    let mut sum = 0.0;
    for class in [ClassLabel::Obj, ClassLabel::Subj] {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for i in 0..golds.len() {
            let p = preds[i] == class;
            let g = golds[i] == class;
            if p && g {
                tp += 1;
            } else if p {
                fp += 1;
            } else if g {
                fn_ += 1;
            }
        }
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        sum += if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
    }
    sum / 2.0
}

// ---------------------------------------------------------------- AdamW

/// Textbook AdamW on a flat vector.
pub struct AdamRef {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: i32,
}

impl AdamRef {
    pub fn new(n: usize) -> Self {
        AdamRef { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, theta: &mut [f64], g: &[f64], lr: f64, b1: f64, b2: f64, eps: f64, wd: f64) {
        self.t += 1;
        for i in 0..theta.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = self.m[i] / (1.0 - b1.powi(self.t));
            let vh = self.v[i] / (1.0 - b2.powi(self.t));
            let decayed = theta[i] * (1.0 - lr * wd);
            theta[i] = decayed - lr * mh / (vh.sqrt() + eps);
        }
    }
}

// ---------------------------------------------------------------- models

pub const GRAD_TEXTS: [&str; 6] = [
    "the cat sat on the mat",
    "i think the cat is wonderful",
    "a dog ran to the park",
    "honestly the park is awful",
    "the mat is red",
    "i love a red dog",
];

pub fn rows(texts: &[&str], lang: &str) -> Vec<LabeledSentence> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| LabeledSentence {
            sentence_id: format!("{lang}{i}"),
            text: t.to_string(),
            language: lang.to_string(),
            label: Some(if i % 2 == 1 { ClassLabel::Subj } else { ClassLabel::Obj }),
        })
        .collect()
}

pub fn dataset(texts: &[&str], lang: &str, split: Split) -> Dataset {
    Dataset::new(lang, split, rows(texts, lang))
}

pub fn small_tfidf() -> TfidfConfig {
    TfidfConfig {
        max_features: 10,
        ..TfidfConfig::default()
    }
}

pub fn tiny_config() -> TinyEncoderConfig {
    TinyEncoderConfig {
        dim: 8,
        layers: 1,
        heads: 2,
        ff_dim: 16,
        max_len: 16,
        refine_heads: 2,
        dropout: 0.1,
    }
}

pub fn small_head() -> HeadOptions {
    HeadOptions {
        proj_dim: 128,
        hidden: 16,
        dropout: 0.1,
    }
}

/// Gated head over a d=8 tiny encoder, k=10 TF-IDF features, h_mid=16.
pub fn tiny_gated(seed: u64, fusion: FusionMode) -> Classifier {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tfidf = fit_vectorizer(&GRAD_TEXTS, small_tfidf()).unwrap();
    assert_eq!(tfidf.dim(), 10);
    let vocab = build_vocab(&GRAD_TEXTS, 50).unwrap();
    let enc = TinyEncoder::new(tiny_config(), vocab, &mut rng).unwrap();
    Classifier::new(
        Architecture::Gated,
        fusion,
        EncoderProvider::TinyTrainable(Box::new(enc)),
        tfidf,
        PosSource::Uniform,
        small_head(),
        &mut rng,
    )
    .unwrap()
}

pub fn random_table(ids: &[String], dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = EmbeddingTable::new(dim);
    for id in ids {
        t.insert(id.clone(), (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    }
    t
}

pub fn random_pos(ids: &[String], seed: u64) -> PosSource {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PosSource::Table(
        ids.iter()
            .map(|id| {
                let w: Vec<f64> = (0..9).map(|_| rng.random_range(0.05..1.0)).collect();
                (id.clone(), PosDistribution::from_weights(id, &w).unwrap())
            })
            .collect(),
    )
}

/// Concat head (POS + TF-IDF) over precomputed d-dimensional embeddings.
pub fn concat_model(seed: u64, dim: usize) -> Classifier {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<String> = rows(&GRAD_TEXTS, "g").into_iter().map(|r| r.sentence_id).collect();
    let tfidf = fit_vectorizer(&GRAD_TEXTS, small_tfidf()).unwrap();
    Classifier::new(
        Architecture::Concat,
        FusionMode::Ungated,
        EncoderProvider::Precomputed(random_table(&ids, dim, seed + 1)),
        tfidf,
        random_pos(&ids, seed + 2),
        small_head(),
        &mut rng,
    )
    .unwrap()
}

// ---------------------------------------------------------------- gradients

pub fn total_loss(model: &Classifier, examples: &[Example], seeds: &[Option<u64>]) -> f64 {
    examples
        .iter()
        .zip(seeds)
        .map(|(ex, s)| {
            let (logits, _) = model.forward(ex, *s).unwrap();
            cross_entropy(&logits, ex.label.unwrap().index()).unwrap()
        })
        .sum()
}

fn nudge(model: &mut Classifier, tensor: usize, elem: usize, delta: f64) {
    let mut i = 0;
    model.visit_mut(&mut |_, t| {
        if i == tensor {
            t.data[elem] += delta;
        }
        i += 1;
    });
}

#[derive(Debug)]
pub struct TensorCheck {
    pub name: String,
    pub rel_error: f64,
    pub analytic_norm: f64,
}

/// Compares analytic gradients with central differences, tensor by tensor.
/// Error is `‖a − n‖ / max(‖a‖, ‖n‖)`, or the absolute difference when both
/// norms are below 1e-8.
pub fn gradient_check(model: &mut Classifier, examples: &[Example], seeds: &[Option<u64>], h: f64) -> Vec<TensorCheck> {
    let mut grad = model.zero_grads();
    for (ex, s) in examples.iter().zip(seeds) {
        model.accumulate_example(ex, *s, 1.0, &mut grad).unwrap();
    }
    let analytic: Vec<(String, Vec<f64>)> = grad.named().into_iter().map(|(n, t)| (n, t.data.clone())).collect();
    let sizes: Vec<usize> = model.named().iter().map(|(_, t)| t.len()).collect();
    assert_eq!(sizes.len(), analytic.len());

    let mut out = Vec::new();
    for (ti, (name, a)) in analytic.iter().enumerate() {
        let mut diff = 0.0;
        let mut na = 0.0;
        let mut nn = 0.0;
        for e in 0..sizes[ti] {
            nudge(model, ti, e, h);
            let up = total_loss(model, examples, seeds);
            nudge(model, ti, e, -2.0 * h);
            let down = total_loss(model, examples, seeds);
            nudge(model, ti, e, h);
            let num = (up - down) / (2.0 * h);
            diff += (a[e] - num).powi(2);
            na += a[e] * a[e];
            nn += num * num;
        }
        let (diff, na, nn) = (diff.sqrt(), na.sqrt(), nn.sqrt());
        let denom = na.max(nn);
        out.push(TensorCheck {
            name: name.clone(),
            rel_error: if denom < 1e-8 { diff } else { diff / denom },
            analytic_norm: na,
        });
    }
    out
}
