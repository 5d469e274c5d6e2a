//! Synthetic multilingual subjectivity corpora for tests, benchmarks and
//! smoke runs.
//!
//! Every language draws sentences from its own filler lexicon. A sentence is
//! SUBJ when it contains one of the language's cue words, or when its single
//! one-off word carries the shared character cue. One-off words never reach
//! the tokenizer vocabulary (see [`SynthConfig::max_vocab`]), so the
//! character cue is only visible through character n-grams.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ClassLabel, Dataset, LabeledSentence, Split};
use crate::encoder::EmbeddingTable;
use crate::error::{Error, Result};
use crate::orchestrate::LanguageData;

/// Letters used for every generated word. The character cue uses letters
/// outside this set, so it cannot appear by accident.
const ALPHABET: &[u8] = b"abcdefghijklmnoprstuvwy";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub languages: Vec<String>,
    pub sentences_per_language: usize,
    pub lexicon_size: usize,
    pub cue_words: usize,
    pub char_cue: String,
    pub min_words: usize,
    pub max_words: usize,
    pub token_cue_rate: f64,
    pub char_cue_rate: f64,
    /// Fractions for train and dev; the rest is dev-test.
    pub train_frac: f64,
    pub dev_frac: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            languages: vec!["xa".into(), "xb".into()],
            sentences_per_language: 200,
            lexicon_size: 40,
            cue_words: 1,
            char_cue: "zqx".into(),
            min_words: 4,
            max_words: 8,
            token_cue_rate: 0.25,
            char_cue_rate: 0.25,
            train_frac: 0.6,
            dev_frac: 0.2,
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// Vocabulary size that keeps every lexicon and cue word and nothing
    /// else.
    pub fn max_vocab(&self) -> usize {
        self.languages.len() * (self.lexicon_size + self.cue_words)
    }

    fn validate(&self) -> Result<()> {
        let ok = !self.languages.is_empty()
            && self.sentences_per_language >= 10
            && self.lexicon_size > 0
            && self.cue_words > 0
            && !self.char_cue.is_empty()
            && self.char_cue.bytes().all(|b| b.is_ascii_lowercase() && !ALPHABET.contains(&b))
            && 0 < self.min_words
            && self.min_words <= self.max_words
            && self.token_cue_rate >= 0.0
            && self.char_cue_rate >= 0.0
            && self.token_cue_rate + self.char_cue_rate <= 1.0
            && self.train_frac > 0.0
            && self.dev_frac > 0.0
            && self.train_frac + self.dev_frac < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid synthetic corpus settings: {self:?}")))
        }
    }
}

fn random_word<R: Rng>(rng: &mut R, len: usize) -> String {
    (0..len).map(|_| *ALPHABET.choose(rng).unwrap() as char).collect()
}

fn fresh_word<R: Rng>(rng: &mut R, taken: &mut HashSet<String>, min: usize, max: usize) -> String {
    loop {
        let len = rng.random_range(min..=max);
        let w = random_word(rng, len);
        if taken.insert(w.clone()) {
            return w;
        }
    }
}

/// Generates train, dev and dev-test splits for every configured language.
pub fn generate(config: &SynthConfig) -> Result<Vec<LanguageData>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut taken = HashSet::new();
    let mut out = Vec::with_capacity(config.languages.len());
    for lang in &config.languages {
        let lexicon: Vec<String> = (0..config.lexicon_size)
            .map(|_| fresh_word(&mut rng, &mut taken, 3, 6))
            .collect();
        let cues: Vec<String> = (0..config.cue_words)
            .map(|_| fresh_word(&mut rng, &mut taken, 4, 6))
            .collect();

        let mut rows = Vec::with_capacity(config.sentences_per_language);
        for i in 0..config.sentences_per_language {
            let n = rng.random_range(config.min_words..=config.max_words);
            let mut words: Vec<String> = (0..n).map(|_| lexicon.choose(&mut rng).unwrap().clone()).collect();
            let roll: f64 = rng.random();
            let token_cue = roll < config.token_cue_rate;
            let char_cue = !token_cue && roll < config.token_cue_rate + config.char_cue_rate;
            if token_cue {
                let at = rng.random_range(0..n);
                words[at] = cues.choose(&mut rng).unwrap().clone();
            }
            let oneoff = if char_cue {
                loop {
                    let (la, lb) = (rng.random_range(2..=3), rng.random_range(2..=3));
                    let a = random_word(&mut rng, la);
                    let b = random_word(&mut rng, lb);
                    let w = format!("{a}{}{b}", config.char_cue);
                    if taken.insert(w.clone()) {
                        break w;
                    }
                }
            } else {
                fresh_word(&mut rng, &mut taken, 7, 9)
            };
            let at = rng.random_range(0..=n);
            words.insert(at, oneoff);
            let label = if token_cue || char_cue {
                ClassLabel::Subj
            } else {
                ClassLabel::Obj
            };
            rows.push(LabeledSentence {
                sentence_id: format!("{lang}-{i:05}"),
                text: words.join(" "),
                language: lang.clone(),
                label: Some(label),
            });
        }

        let n_train = (config.sentences_per_language as f64 * config.train_frac).round() as usize;
        let n_dev = (config.sentences_per_language as f64 * config.dev_frac).round() as usize;
        let dev_test = rows.split_off(n_train + n_dev);
        let dev = rows.split_off(n_train);
        out.push(LanguageData {
            language: lang.clone(),
            train: Dataset::new(lang.clone(), Split::Train, rows),
            dev: Dataset::new(lang.clone(), Split::Dev, dev),
            eval: Some(Dataset::new(lang.clone(), Split::DevTest, dev_test)),
        });
    }
    Ok(out)
}

/// Random sentence embeddings for every row of `data`, keyed by sentence id.
pub fn random_embeddings(data: &[LanguageData], dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = EmbeddingTable::new(dim);
    for l in data {
        for split in [Some(&l.train), Some(&l.dev), l.eval.as_ref()].into_iter().flatten() {
            for row in &split.rows {
                let v = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                table.insert(row.sentence_id.clone(), v)?;
            }
        }
    }
    Ok(table)
}
