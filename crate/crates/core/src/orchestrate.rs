//! Sequential cross-lingual fine-tuning, ablation runs and language-order
//! studies.
//!
//! A chain trains one model on a sequence of languages. Stage `i > 1` starts
//! from the best parameters of stage `i - 1`; optimizer and scheduler state
//! start fresh at every stage.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_classifier, tensor_digest};
use crate::corpus::{load_dataset, Dataset, Split};
use crate::encoder::{build_vocab, EmbeddingTable, EncoderProvider, TinyEncoder, TinyEncoderConfig};
use crate::error::{Error, Result};
use crate::eval::ResultTable;
use crate::exec::Execution;
use crate::fusion::FusionMode;
use crate::lexical::{fit_vectorizer_with, TfidfConfig};
use crate::model::{Architecture, Classifier, HeadOptions};
use crate::posfeat::{load_pos_table, PosSource};
use crate::train::{evaluate, train_model, RunRecord, TrainConfig, TrainOptions};

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderRecipe {
    Tiny { config: TinyEncoderConfig, max_vocab: usize },
    Precomputed(EmbeddingTable),
}

/// Everything needed to build a freshly initialized classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecipe {
    pub arch: Architecture,
    pub fusion: FusionMode,
    pub encoder: EncoderRecipe,
    pub tfidf: TfidfConfig,
    pub head: HeadOptions,
    pub pos: PosSource,
    pub seed: u64,
}

impl ModelRecipe {
    pub fn with_fusion(&self, fusion: FusionMode) -> Self {
        ModelRecipe {
            fusion,
            ..self.clone()
        }
    }

    /// Fits the TF-IDF model (and tokenizer vocabulary) on `texts` and
    /// initializes all parameters from `seed`.
    pub fn build(&self, texts: &[&str], exec: Execution) -> Result<Classifier> {
        let tfidf = fit_vectorizer_with(texts, self.tfidf, exec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let encoder = match &self.encoder {
            EncoderRecipe::Tiny { config, max_vocab } => {
                let vocab = build_vocab(texts, *max_vocab)?;
                EncoderProvider::TinyTrainable(Box::new(TinyEncoder::new(*config, vocab, &mut rng)?))
            }
            EncoderRecipe::Precomputed(table) => EncoderProvider::Precomputed(table.clone()),
        };
        Classifier::new(self.arch, self.fusion, encoder, tfidf, self.pos.clone(), self.head, &mut rng)
    }
}

/// How the TF-IDF vectorizer is fit across a chain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TfidfFit {
    /// Once, on the union of every stage's training texts.
    #[default]
    Union,
    /// Refit on each stage's training texts. When the feature count changes
    /// the TF-IDF projection is re-initialized, so the chain is not exact.
    PerStage,
}

/// Training, validation and held-out evaluation data for one language.
#[derive(Debug, Clone)]
pub struct LanguageData {
    pub language: String,
    pub train: Dataset,
    pub dev: Dataset,
    /// Split scored in ablation and order-study tables; falls back to `dev`.
    pub eval: Option<Dataset>,
}

impl LanguageData {
    pub fn eval_split(&self) -> &Dataset {
        self.eval.as_ref().unwrap_or(&self.dev)
    }
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub data: LanguageData,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCheckpoint {
    Fresh,
    Path(PathBuf),
}

#[derive(Debug, Clone)]
pub struct SequencePlan {
    pub stages: Vec<Stage>,
    pub initial: InitialCheckpoint,
}

impl SequencePlan {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidConfig("a plan needs at least one stage".into()));
        }
        let mut seen = HashSet::new();
        for s in &self.stages {
            if !seen.insert(s.data.language.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "language {:?} appears twice in the plan",
                    s.data.language
                )));
            }
            s.config.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct SequenceOptions {
    pub exec: Execution,
    pub out_dir: Option<PathBuf>,
    pub tfidf_fit: TfidfFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub language: String,
    /// Digest of the tensors this stage started from.
    pub source_checkpoint: String,
    pub record: RunRecord,
}

#[derive(Debug, Clone)]
pub struct SequenceOutcome {
    pub stages: Vec<StageRecord>,
    pub model: Classifier,
}

fn union_texts(stages: &[Stage]) -> Vec<&str> {
    stages.iter().flat_map(|s| s.data.train.texts()).collect()
}

pub fn train_sequence(plan: &SequencePlan, recipe: &ModelRecipe, options: &SequenceOptions) -> Result<SequenceOutcome> {
    plan.validate()?;
    let exec = options.exec;
    let mut model = match &plan.initial {
        InitialCheckpoint::Fresh => recipe.build(&union_texts(&plan.stages), exec)?,
        InitialCheckpoint::Path(dir) => {
            if !dir.join("manifest.json").is_file() {
                return Err(Error::ChainBroken(format!("no checkpoint at {}", dir.display())));
            }
            let embeddings = match &recipe.encoder {
                EncoderRecipe::Precomputed(t) => Some(t.clone()),
                EncoderRecipe::Tiny { .. } => None,
            };
            load_classifier(dir, embeddings, recipe.pos.clone())?
        }
    };
    let chain_k = model.tfidf.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed ^ 0x7F4A_7C15);

    let mut records: Vec<StageRecord> = Vec::with_capacity(plan.stages.len());
    for (i, stage) in plan.stages.iter().enumerate() {
        match options.tfidf_fit {
            TfidfFit::Union => {
                if model.tfidf.dim() != chain_k {
                    return Err(Error::VocabMismatch {
                        expected: chain_k,
                        got: model.tfidf.dim(),
                    });
                }
            }
            TfidfFit::PerStage => {
                let texts: Vec<&str> = stage.data.train.texts().collect();
                let tfidf = fit_vectorizer_with(&texts, recipe.tfidf, exec)?;
                model.replace_tfidf(tfidf, &mut rng);
            }
        }
        let source = tensor_digest(&model);
        if let Some(prev) = records.last() {
            if options.tfidf_fit == TfidfFit::Union && prev.record.best_digest != source {
                return Err(Error::ChainBroken(format!(
                    "stage {} does not start from stage {} best parameters",
                    i + 1,
                    i
                )));
            }
        }
        let train_options = TrainOptions {
            exec,
            checkpoint_dir: options
                .out_dir
                .as_ref()
                .map(|d| d.join(format!("stage-{}-{}", i + 1, stage.data.language))),
            language: Some(stage.data.language.clone()),
        };
        let outcome = train_model(&mut model, &stage.data.train, &stage.data.dev, &stage.config, &train_options)?;
        records.push(StageRecord {
            language: stage.data.language.clone(),
            source_checkpoint: source,
            record: outcome.record,
        });
    }
    Ok(SequenceOutcome { stages: records, model })
}

/// Macro-F1 of `model` on a labeled dataset, with no further training.
pub fn zero_shot(model: &Classifier, data: &Dataset, exec: Execution) -> Result<f64> {
    let examples = model.prepare(&data.rows, exec)?;
    Ok(evaluate(model, &examples, exec)?.macro_f1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationVariant {
    Full,
    EncoderOnly,
    ConcatNoGating,
    FullNoCrossLingual,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::Full,
        AblationVariant::EncoderOnly,
        AblationVariant::ConcatNoGating,
        AblationVariant::FullNoCrossLingual,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationVariant::Full => "Full (encoder + TF-IDF + gating)",
            AblationVariant::EncoderOnly => "Encoder only",
            AblationVariant::ConcatNoGating => "Encoder + TF-IDF (no gating)",
            AblationVariant::FullNoCrossLingual => "Full (no cross-lingual training)",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::EncoderOnly => "encoder-only",
            AblationVariant::ConcatNoGating => "concat-no-gating",
            AblationVariant::FullNoCrossLingual => "full-no-cross-lingual",
        }
    }

    pub fn fusion(self) -> FusionMode {
        match self {
            AblationVariant::Full | AblationVariant::FullNoCrossLingual => FusionMode::Gated,
            AblationVariant::EncoderOnly => FusionMode::EncoderOnly,
            AblationVariant::ConcatNoGating => FusionMode::Ungated,
        }
    }
}

impl std::str::FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationVariant::ALL
            .into_iter()
            .find(|v| v.slug() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown ablation variant {s:?}")))
    }
}

fn sub_options(options: &SequenceOptions, parts: &[&str]) -> SequenceOptions {
    SequenceOptions {
        exec: options.exec,
        out_dir: options.out_dir.as_ref().map(|d| parts.iter().fold(d.clone(), |p, s| p.join(s))),
        tfidf_fit: options.tfidf_fit,
    }
}

fn chain_plan(languages: &[&LanguageData], config: &TrainConfig) -> SequencePlan {
    SequencePlan {
        stages: languages
            .iter()
            .map(|l| Stage {
                data: (*l).clone(),
                config: config.clone(),
            })
            .collect(),
        initial: InitialCheckpoint::Fresh,
    }
}

fn score_all(model: &Classifier, languages: &[LanguageData], exec: Execution) -> Result<Vec<f64>> {
    languages
        .iter()
        .map(|l| zero_shot(model, l.eval_split(), exec))
        .collect()
}

/// Variant × language macro-F1 table. Chained variants train on the
/// languages in the given order and score the final model on every
/// language; `FullNoCrossLingual` trains one fresh model per language.
pub fn run_ablation(
    languages: &[LanguageData],
    variants: &[AblationVariant],
    config: &TrainConfig,
    recipe: &ModelRecipe,
    options: &SequenceOptions,
) -> Result<ResultTable> {
    if recipe.arch != Architecture::Gated {
        return Err(Error::InvalidConfig("ablation variants apply to the gated architecture".into()));
    }
    if languages.is_empty() || variants.is_empty() {
        return Err(Error::InvalidConfig("ablation needs languages and variants".into()));
    }
    let exec = options.exec;
    let all: Vec<&LanguageData> = languages.iter().collect();
    let rows = exec.map(variants, |&variant| -> Result<Vec<f64>> {
        let recipe = recipe.with_fusion(variant.fusion());
        if variant == AblationVariant::FullNoCrossLingual {
            // fresh model per language, shared vectorizer fit
            let union: Vec<&str> = languages.iter().flat_map(|l| l.train.texts()).collect();
            return languages
                .iter()
                .map(|l| {
                    let mut model = recipe.build(&union, exec)?;
                    let sub = sub_options(options, &[variant.slug(), &l.language]);
                    let train_options = TrainOptions {
                        exec,
                        checkpoint_dir: sub.out_dir,
                        language: Some(l.language.clone()),
                    };
                    train_model(&mut model, &l.train, &l.dev, config, &train_options)?;
                    zero_shot(&model, l.eval_split(), exec)
                })
                .collect();
        }
        let outcome = train_sequence(&chain_plan(&all, config), &recipe, &sub_options(options, &[variant.slug()]))?;
        score_all(&outcome.model, languages, exec)
    });

    let mut table = ResultTable::new(
        "Model configuration",
        languages.iter().map(|l| l.language.clone()).collect(),
    );
    for (variant, row) in variants.iter().zip(rows) {
        table.push_row(variant.label(), row?);
    }
    Ok(table)
}

pub fn permutation_label(order: &[String]) -> String {
    format!("({})", order.join(" → "))
}

/// Permutation × language macro-F1 table: one chain per permutation, with
/// the final model scored on every language's evaluation split.
pub fn run_order_study(
    languages: &[LanguageData],
    permutations: &[Vec<String>],
    config: &TrainConfig,
    recipe: &ModelRecipe,
    options: &SequenceOptions,
) -> Result<ResultTable> {
    if permutations.len() < 2 {
        return Err(Error::InvalidConfig("an order study needs at least two permutations".into()));
    }
    let mut resolved = Vec::with_capacity(permutations.len());
    for perm in permutations {
        if perm.is_empty() {
            return Err(Error::InvalidConfig("empty permutation".into()));
        }
        let stages = perm
            .iter()
            .map(|code| {
                languages
                    .iter()
                    .find(|l| &l.language == code)
                    .ok_or_else(|| Error::InvalidConfig(format!("no data for language {code:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        resolved.push(stages);
    }
    let exec = options.exec;
    let rows = exec.map(&resolved, |stages| -> Result<Vec<f64>> {
        let slug: Vec<&str> = stages.iter().map(|l| l.language.as_str()).collect();
        let outcome = train_sequence(&chain_plan(stages, config), recipe, &sub_options(options, &[&slug.join("-")]))?;
        score_all(&outcome.model, languages, exec)
    });
    let mut table = ResultTable::new(
        "Language order",
        languages.iter().map(|l| l.language.clone()).collect(),
    );
    for (perm, row) in permutations.iter().zip(rows) {
        table.push_row(permutation_label(perm), row?);
    }
    Ok(table)
}

/// JSON plan file. Relative paths resolve against the plan's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    #[serde(default = "default_arch")]
    pub arch: Architecture,
    #[serde(default = "default_fusion")]
    pub fusion: FusionMode,
    #[serde(default)]
    pub encoder: EncoderFileSpec,
    #[serde(default)]
    pub tfidf: Option<TfidfConfig>,
    #[serde(default)]
    pub tfidf_fit: TfidfFit,
    #[serde(default)]
    pub head: Option<HeadOptions>,
    #[serde(default)]
    pub pos: Option<PathBuf>,
    #[serde(default)]
    pub config: Option<serde_json::Value>,
    #[serde(default)]
    pub initial_checkpoint: Option<PathBuf>,
    pub stages: Vec<StageFile>,
}

fn default_arch() -> Architecture {
    Architecture::Gated
}

fn default_fusion() -> FusionMode {
    FusionMode::Gated
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EncoderFileSpec {
    Tiny {
        #[serde(default)]
        config: Option<TinyEncoderConfig>,
        #[serde(default = "default_max_vocab")]
        max_vocab: usize,
    },
    Precomputed {
        path: PathBuf,
    },
}

fn default_max_vocab() -> usize {
    5000
}

impl Default for EncoderFileSpec {
    fn default() -> Self {
        EncoderFileSpec::Tiny {
            config: None,
            max_vocab: default_max_vocab(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageFile {
    pub language: String,
    pub train: PathBuf,
    pub dev: PathBuf,
    #[serde(default)]
    pub dev_test: Option<PathBuf>,
    #[serde(default)]
    pub overrides: Option<serde_json::Value>,
}

/// Overlays the fields of `overlay` (a JSON object) onto `base`.
pub fn merge_config(base: &TrainConfig, overlay: Option<&serde_json::Value>) -> Result<TrainConfig> {
    let Some(overlay) = overlay else {
        return Ok(base.clone());
    };
    let serde_json::Value::Object(fields) = overlay else {
        return Err(Error::InvalidConfig("config overrides must be a JSON object".into()));
    };
    let mut value = serde_json::to_value(base)?;
    if let serde_json::Value::Object(target) = &mut value {
        for (k, v) in fields {
            if !target.contains_key(k) {
                return Err(Error::InvalidConfig(format!("unknown training option {k:?}")));
            }
            target.insert(k.clone(), v.clone());
        }
    }
    let merged: TrainConfig = serde_json::from_value(value)?;
    merged.validate()?;
    Ok(merged)
}

/// Default tiny-encoder settings per architecture: 16 refinement heads for
/// the gated head, 8 for the concat head.
pub fn default_tiny_config(arch: Architecture) -> TinyEncoderConfig {
    TinyEncoderConfig {
        refine_heads: match arch {
            Architecture::Gated => 16,
            Architecture::Concat => 8,
        },
        ..TinyEncoderConfig::default()
    }
}

pub fn default_train_config(arch: Architecture) -> TrainConfig {
    match arch {
        Architecture::Gated => TrainConfig::gated_preset(),
        Architecture::Concat => TrainConfig::concat_preset(),
    }
}

/// A fully resolved plan file.
#[derive(Debug, Clone)]
pub struct LoadedPlan {
    pub plan: SequencePlan,
    pub recipe: ModelRecipe,
    pub tfidf_fit: TfidfFit,
    pub base_config: TrainConfig,
}

impl PlanFile {
    pub fn read(path: &Path) -> Result<PlanFile> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Loads every dataset and resolves configuration. `seed`, when given,
    /// replaces the seed of the model initialization and of every stage.
    pub fn resolve(&self, base_dir: &Path, seed: Option<u64>) -> Result<LoadedPlan> {
        let at = |p: &Path| -> PathBuf {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };
        let mut base_config = merge_config(&default_train_config(self.arch), self.config.as_ref())?;
        if let Some(s) = seed {
            base_config.seed = s;
        }
        let encoder = match &self.encoder {
            EncoderFileSpec::Tiny { config, max_vocab } => EncoderRecipe::Tiny {
                config: config.unwrap_or_else(|| default_tiny_config(self.arch)),
                max_vocab: *max_vocab,
            },
            EncoderFileSpec::Precomputed { path } => EncoderRecipe::Precomputed(EmbeddingTable::load(&at(path))?),
        };
        let pos = match &self.pos {
            Some(p) => PosSource::Table(load_pos_table(&at(p))?),
            None => PosSource::Uniform,
        };
        let recipe = ModelRecipe {
            arch: self.arch,
            fusion: self.fusion,
            encoder,
            tfidf: self.tfidf.unwrap_or_default(),
            head: self.head.unwrap_or_default(),
            pos,
            seed: base_config.seed,
        };
        let stages = self
            .stages
            .iter()
            .map(|s| -> Result<Stage> {
                let mut config = merge_config(&base_config, s.overrides.as_ref())?;
                if let Some(seed) = seed {
                    config.seed = seed;
                }
                Ok(Stage {
                    data: LanguageData {
                        language: s.language.clone(),
                        train: load_dataset(&at(&s.train), &s.language, Split::Train)?,
                        dev: load_dataset(&at(&s.dev), &s.language, Split::Dev)?,
                        eval: s
                            .dev_test
                            .as_ref()
                            .map(|p| load_dataset(&at(p), &s.language, Split::DevTest))
                            .transpose()?,
                    },
                    config,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let plan = SequencePlan {
            stages,
            initial: match &self.initial_checkpoint {
                Some(p) => InitialCheckpoint::Path(at(p)),
                None => InitialCheckpoint::Fresh,
            },
        };
        plan.validate()?;
        Ok(LoadedPlan {
            plan,
            recipe,
            tfidf_fit: self.tfidf_fit,
            base_config,
        })
    }
}
