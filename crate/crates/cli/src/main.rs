//! `subjfuse` command-line interface.
//!
//! Exit codes: 0 on success, 1 on user error (bad flags, missing or
//! malformed inputs), 2 on internal error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "subjfuse", version, about = "Sentence-level subjectivity classifiers with lexical feature fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Fit a character n-gram TF-IDF vectorizer on one or more datasets.
    FitVectorizer(FitVectorizerArgs),
    /// Train one classifier on a single language.
    Train(TrainArgs),
    /// Train one model through a sequence of languages described by a plan.
    TrainSequence(SequenceArgs),
    /// Run the ablation variants over the languages of a plan.
    Ablate(AblateArgs),
    /// Compare language orders over the languages of a plan.
    OrderStudy(OrderArgs),
    /// Label a dataset with a trained checkpoint.
    Predict(PredictArgs),
    /// Score a predictions file against gold labels.
    Evaluate(EvaluateArgs),
    /// Render stored tables or run records as CSV or Markdown.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Preset {
    ArabicConcat,
    Gated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ArchArg {
    Gated,
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum FusionArg {
    Gated,
    Ungated,
    EncoderOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum FormatArg {
    Csv,
    Markdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum TfidfFitArg {
    Union,
    PerStage,
}

#[derive(Debug, Args, Serialize)]
struct Common {
    /// Output directory; created if missing.
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    /// Run every data-parallel stage on the calling thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args, Serialize)]
struct TfidfArgs {
    #[arg(long, default_value_t = 3)]
    n_min: usize,
    #[arg(long, default_value_t = 7)]
    n_max: usize,
    #[arg(long, default_value_t = 3000)]
    max_features: usize,
    #[arg(long, default_value_t = 2)]
    min_df: usize,
    /// Keep letter case when extracting n-grams.
    #[arg(long)]
    keep_case: bool,
}

#[derive(Debug, Args, Serialize)]
struct FitVectorizerArgs {
    /// Dataset TSV files; the vectorizer is fit on all their sentences.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    tfidf: TfidfArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long, default_value = "xx")]
    lang: String,
    /// Hyperparameter preset.
    #[arg(long, value_enum, default_value_t = Preset::Gated)]
    preset: Preset,
    /// Classifier head; defaults to the preset's head.
    #[arg(long, value_enum)]
    arch: Option<ArchArg>,
    #[arg(long, value_enum, default_value_t = FusionArg::Gated)]
    fusion: FusionArg,
    /// JSON file with training options overriding the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    grad_accum: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    /// Precomputed sentence embeddings (`id<TAB>v1,v2,...`) instead of the
    /// tiny encoder.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// POS distribution sidecar (`id<TAB>p1 ... p9`); uniform when absent.
    #[arg(long)]
    pos: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    tfidf: TfidfArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args, Serialize)]
struct ModelArgs {
    #[arg(long, default_value_t = 64)]
    encoder_dim: usize,
    #[arg(long, default_value_t = 2)]
    encoder_layers: usize,
    #[arg(long, default_value_t = 4)]
    encoder_heads: usize,
    #[arg(long, default_value_t = 256)]
    ff_dim: usize,
    #[arg(long, default_value_t = 128)]
    max_len: usize,
    /// Refinement attention heads; 16 for the gated head, 8 for concat.
    #[arg(long)]
    refine_heads: Option<usize>,
    #[arg(long, default_value_t = 5000)]
    max_vocab: usize,
    #[arg(long, default_value_t = 512)]
    hidden: usize,
    #[arg(long, default_value_t = 128)]
    proj_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
}

#[derive(Debug, Args, Serialize)]
struct PlanArgs {
    /// JSON plan listing languages, data files and configuration.
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the plan's TF-IDF fitting mode.
    #[arg(long, value_enum)]
    tfidf_fit: Option<TfidfFitArg>,
}

#[derive(Debug, Args, Serialize)]
struct SequenceArgs {
    #[command(flatten)]
    plan: PlanArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args, Serialize)]
struct AblateArgs {
    #[command(flatten)]
    plan: PlanArgs,
    /// Subset of variants (full, encoder-only, concat-no-gating,
    /// full-no-cross-lingual); all four by default.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args, Serialize)]
struct OrderArgs {
    #[command(flatten)]
    plan: PlanArgs,
    /// Comma-separated language order; repeat for each permutation.
    #[arg(long = "order")]
    orders: Vec<String>,
    /// Study every permutation of the plan's languages.
    #[arg(long, conflicts_with = "orders")]
    all_permutations: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args, Serialize)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "xx")]
    lang: String,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    pos: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    /// Also write metrics.json and run.json here.
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ReportArgs {
    /// Table JSON (from ablate/order-study) or run records (from train or
    /// train-sequence).
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
    format: FormatArg,
    #[command(flatten)]
    common: Common,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
