use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use subjfuse::checkpoint::load_classifier;
use subjfuse::corpus::{load_dataset, Dataset, Split};
use subjfuse::encoder::{EmbeddingTable, TinyEncoderConfig};
use subjfuse::eval::{align, emit_report, macro_f1, predict, read_labels, write_predictions, EvalReport, ReportFormat, ResultTable};
use subjfuse::fusion::FusionMode;
use subjfuse::lexical::{fit_vectorizer_with, TfidfConfig};
use subjfuse::orchestrate::{
    merge_config, run_ablation, run_order_study, train_sequence, zero_shot, AblationVariant, EncoderRecipe, LanguageData,
    LoadedPlan, ModelRecipe, PlanFile, SequenceOptions, StageRecord, TfidfFit,
};
use subjfuse::posfeat::{load_pos_table, PosSource};
use subjfuse::train::{train_model, RunRecord, TrainConfig, TrainOptions};
use subjfuse::{Architecture, Execution, HeadOptions};

use crate::{
    AblateArgs, ArchArg, Command, Common, EvaluateArgs, FitVectorizerArgs, FormatArg, FusionArg, OrderArgs, PlanArgs,
    PredictArgs, Preset, ReportArgs, SequenceArgs, TfidfArgs, TfidfFitArg, TrainArgs,
};

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<subjfuse::Error>() {
            return if e.is_user_error() { 1 } else { 2 };
        }
    }
    1
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::FitVectorizer(a) => fit_vectorizer_cmd(a, command),
        Command::Train(a) => train_cmd(a, command),
        Command::TrainSequence(a) => sequence_cmd(a, command),
        Command::Ablate(a) => ablate_cmd(a, command),
        Command::OrderStudy(a) => order_cmd(a, command),
        Command::Predict(a) => predict_cmd(a, command),
        Command::Evaluate(a) => evaluate_cmd(a, command),
        Command::Report(a) => report_cmd(a, command),
    }
}

fn exec(common: &Common) -> Execution {
    if common.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

#[derive(Serialize)]
struct RunInfo<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a Command,
    #[serde(skip_serializing_if = "Option::is_none")]
    resolved: Option<T>,
}

/// Writes `run.json`. The output directory itself is left out so that two
/// identical invocations writing to different places produce identical files.
fn write_run<T: Serialize>(out: &Path, command: &Command, resolved: Option<T>) -> Result<()> {
    let info = RunInfo {
        tool: "subjfuse",
        version: env!("CARGO_PKG_VERSION"),
        command,
        resolved,
    };
    write_json(&out.join("run.json"), &info)
}

fn relative_to(path: &str, base: &Path) -> String {
    Path::new(path)
        .strip_prefix(base)
        .map(|p| p.to_string_lossy().replace('\\', "/"))
        .unwrap_or_else(|_| path.to_string())
}

fn relativize(record: &mut RunRecord, base: &Path) {
    if let Some(p) = &record.best_checkpoint {
        record.best_checkpoint = Some(relative_to(p, base));
    }
}

fn tfidf_config(a: &TfidfArgs) -> Result<TfidfConfig> {
    let cfg = TfidfConfig {
        n_min: a.n_min,
        n_max: a.n_max,
        max_features: a.max_features,
        min_df: a.min_df,
        lowercase: !a.keep_case,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_any(path: &Path, language: &str) -> Result<Dataset> {
    Ok(load_dataset(path, language, Split::Test)?)
}

fn fit_vectorizer_cmd(a: &FitVectorizerArgs, command: &Command) -> Result<()> {
    let cfg = tfidf_config(&a.tfidf)?;
    let data = a
        .inputs
        .iter()
        .map(|p| load_any(p, "xx"))
        .collect::<Result<Vec<_>>>()?;
    let texts: Vec<&str> = data.iter().flat_map(Dataset::texts).collect();
    let model = fit_vectorizer_with(&texts, cfg, exec(&a.common))?;
    create_out(&a.common.out)?;
    model.save(&a.common.out.join("tfidf.bin"))?;
    #[derive(Serialize)]
    struct Fitted {
        documents: usize,
        features: usize,
    }
    write_run(
        &a.common.out,
        command,
        Some(Fitted {
            documents: texts.len(),
            features: model.dim(),
        }),
    )?;
    println!("fitted {} features on {} documents", model.dim(), texts.len());
    Ok(())
}

fn read_json_value(path: &Path) -> Result<serde_json::Value> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("invalid JSON in {}", path.display()))
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let base = match a.preset {
        Preset::Gated => TrainConfig::gated_preset(),
        Preset::ArabicConcat => TrainConfig::concat_preset(),
    };
    let overlay = a.config.as_deref().map(read_json_value).transpose()?;
    let mut cfg = merge_config(&base, overlay.as_ref())?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.grad_accum {
        cfg.grad_accum_steps = v;
    }
    if let Some(v) = a.patience {
        cfg.patience = v;
    }
    if let Some(v) = a.warmup {
        cfg.warmup_steps = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fusion_mode(f: FusionArg) -> FusionMode {
    match f {
        FusionArg::Gated => FusionMode::Gated,
        FusionArg::Ungated => FusionMode::Ungated,
        FusionArg::EncoderOnly => FusionMode::EncoderOnly,
    }
}

fn pos_source(path: Option<&Path>) -> Result<PosSource> {
    Ok(match path {
        Some(p) => PosSource::Table(load_pos_table(p)?),
        None => PosSource::Uniform,
    })
}

fn embeddings(path: Option<&Path>) -> Result<Option<EmbeddingTable>> {
    Ok(path.map(EmbeddingTable::load).transpose()?)
}

fn train_cmd(a: &TrainArgs, command: &Command) -> Result<()> {
    let arch = match (a.arch, a.preset) {
        (Some(ArchArg::Gated), _) | (None, Preset::Gated) => Architecture::Gated,
        (Some(ArchArg::Concat), _) | (None, Preset::ArabicConcat) => Architecture::Concat,
    };
    let config = train_config(a)?;
    let m = &a.model;
    let encoder = match embeddings(a.embeddings.as_deref())? {
        Some(table) => EncoderRecipe::Precomputed(table),
        None => {
            let tiny = TinyEncoderConfig {
                dim: m.encoder_dim,
                layers: m.encoder_layers,
                heads: m.encoder_heads,
                ff_dim: m.ff_dim,
                max_len: m.max_len,
                refine_heads: m.refine_heads.unwrap_or(match arch {
                    Architecture::Gated => 16,
                    Architecture::Concat => 8,
                }),
                dropout: m.dropout,
            };
            tiny.validate()?;
            EncoderRecipe::Tiny {
                config: tiny,
                max_vocab: m.max_vocab,
            }
        }
    };
    let recipe = ModelRecipe {
        arch,
        fusion: fusion_mode(a.fusion),
        encoder,
        tfidf: tfidf_config(&a.tfidf)?,
        head: HeadOptions {
            proj_dim: m.proj_dim,
            hidden: m.hidden,
            dropout: m.dropout,
        },
        pos: pos_source(a.pos.as_deref())?,
        seed: config.seed,
    };
    let train = load_dataset(&a.train, &a.lang, Split::Train)?;
    let dev = load_dataset(&a.dev, &a.lang, Split::Dev)?;
    let ex = exec(&a.common);
    let texts: Vec<&str> = train.texts().collect();
    let mut model = recipe.build(&texts, ex)?;

    let out = &a.common.out;
    create_out(out)?;
    let options = TrainOptions {
        exec: ex,
        checkpoint_dir: Some(out.join("checkpoint")),
        language: Some(a.lang.clone()),
    };
    let mut outcome = train_model(&mut model, &train, &dev, &config, &options)?;
    relativize(&mut outcome.record, out);
    write_json(&out.join("record.json"), &outcome.record)?;
    write_run(out, command, Some(&config))?;
    println!(
        "best epoch {:?}, dev macro-F1 {:.4}",
        outcome.record.best_epoch,
        outcome.record.best_dev_macro_f1.unwrap_or(0.0)
    );
    Ok(())
}

fn load_plan(a: &PlanArgs) -> Result<LoadedPlan> {
    let file = PlanFile::read(&a.plan)?;
    let base = a.plan.parent().unwrap_or(Path::new("."));
    let mut loaded = file.resolve(base, a.seed)?;
    if let Some(fit) = a.tfidf_fit {
        loaded.tfidf_fit = match fit {
            TfidfFitArg::Union => TfidfFit::Union,
            TfidfFitArg::PerStage => TfidfFit::PerStage,
        };
    }
    Ok(loaded)
}

fn plan_languages(plan: &LoadedPlan) -> Vec<LanguageData> {
    plan.plan.stages.iter().map(|s| s.data.clone()).collect()
}

#[derive(Serialize)]
struct SequenceSummary {
    stages: Vec<StageRecord>,
    /// Macro-F1 of the final model on each language's evaluation split.
    final_scores: BTreeMap<String, f64>,
}

fn sequence_cmd(a: &SequenceArgs, command: &Command) -> Result<()> {
    let plan = load_plan(&a.plan)?;
    let out = &a.common.out;
    create_out(out)?;
    let ex = exec(&a.common);
    let options = SequenceOptions {
        exec: ex,
        out_dir: Some(out.clone()),
        tfidf_fit: plan.tfidf_fit,
    };
    let outcome = train_sequence(&plan.plan, &plan.recipe, &options)?;
    let mut final_scores = BTreeMap::new();
    for stage in &plan.plan.stages {
        let score = zero_shot(&outcome.model, stage.data.eval_split(), ex)?;
        final_scores.insert(stage.data.language.clone(), score);
    }
    let mut stages = outcome.stages;
    for s in &mut stages {
        relativize(&mut s.record, out);
    }
    for s in &stages {
        println!(
            "{}: best epoch {:?}, dev macro-F1 {:.4}",
            s.language,
            s.record.best_epoch,
            s.record.best_dev_macro_f1.unwrap_or(0.0)
        );
    }
    write_json(&out.join("sequence.json"), &SequenceSummary { stages, final_scores })?;
    write_run(out, command, Some(&plan.base_config))?;
    Ok(())
}

fn write_table(out: &Path, stem: &str, table: &ResultTable) -> Result<()> {
    emit_report(table, ReportFormat::Csv, &out.join(format!("{stem}.csv")))?;
    emit_report(table, ReportFormat::Markdown, &out.join(format!("{stem}.md")))?;
    write_json(&out.join(format!("{stem}.json")), table)?;
    print!("{}", table.to_markdown());
    Ok(())
}

fn ablate_cmd(a: &AblateArgs, command: &Command) -> Result<()> {
    let variants = if a.variants.is_empty() {
        AblationVariant::ALL.to_vec()
    } else {
        a.variants
            .iter()
            .map(|v| v.parse::<AblationVariant>())
            .collect::<std::result::Result<Vec<_>, _>>()?
    };
    let plan = load_plan(&a.plan)?;
    let out = &a.common.out;
    create_out(out)?;
    let options = SequenceOptions {
        exec: exec(&a.common),
        out_dir: Some(out.clone()),
        tfidf_fit: plan.tfidf_fit,
    };
    let table = run_ablation(&plan_languages(&plan), &variants, &plan.base_config, &plan.recipe, &options)?;
    write_table(out, "ablation", &table)?;
    write_run(out, command, Some(&plan.base_config))
}

fn permutations(items: &[String]) -> Vec<Vec<String>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

fn order_cmd(a: &OrderArgs, command: &Command) -> Result<()> {
    let plan = load_plan(&a.plan)?;
    let languages = plan_languages(&plan);
    let codes: Vec<String> = languages.iter().map(|l| l.language.clone()).collect();
    let perms = if a.all_permutations {
        permutations(&codes)
    } else {
        a.orders
            .iter()
            .map(|o| o.split(',').map(|s| s.trim().to_string()).collect())
            .collect()
    };
    if perms.len() < 2 {
        bail!("an order study needs at least two orders (repeat --order or pass --all-permutations)");
    }
    for p in &perms {
        if let Some(code) = p.iter().find(|c| !codes.contains(c)) {
            bail!("language {code:?} is not in the plan (have {})", codes.join(", "));
        }
    }
    let out = &a.common.out;
    create_out(out)?;
    let options = SequenceOptions {
        exec: exec(&a.common),
        out_dir: Some(out.clone()),
        tfidf_fit: plan.tfidf_fit,
    };
    let table = run_order_study(&languages, &perms, &plan.base_config, &plan.recipe, &options)?;
    write_table(out, "order_study", &table)?;
    write_run(out, command, Some(&plan.base_config))
}

fn predict_cmd(a: &PredictArgs, command: &Command) -> Result<()> {
    if !a.checkpoint.join("manifest.json").is_file() {
        bail!("no checkpoint at {}", a.checkpoint.display());
    }
    let data = load_any(&a.input, &a.lang)?;
    let model = load_classifier(&a.checkpoint, embeddings(a.embeddings.as_deref())?, pos_source(a.pos.as_deref())?)?;
    let labels = predict(&model, &data.rows, exec(&a.common))?;
    let ids: Vec<String> = data.rows.iter().map(|r| r.sentence_id.clone()).collect();
    create_out(&a.common.out)?;
    write_predictions(&a.common.out.join("predictions.tsv"), &ids, &labels)?;
    write_run::<()>(&a.common.out, command, None)?;
    println!("labeled {} sentences", labels.len());
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs, command: &Command) -> Result<()> {
    let preds = read_labels(&a.pred)?;
    let golds = read_labels(&a.gold)?;
    let (p, g) = align(&preds, &golds)?;
    let report: EvalReport = macro_f1(&p, &g)?;
    println!("macro-F1 {:.4}", report.macro_f1);
    if let Some(out) = &a.out {
        create_out(out)?;
        write_json(&out.join("metrics.json"), &report)?;
        write_run::<()>(out, command, None)?;
    }
    Ok(())
}

fn record_row(record: &RunRecord) -> Vec<f64> {
    vec![
        record.best_epoch.map_or(f64::NAN, |e| e as f64),
        record.best_dev_loss.unwrap_or(f64::NAN),
        record.best_dev_macro_f1.unwrap_or(f64::NAN),
    ]
}

fn record_table() -> ResultTable {
    ResultTable::new(
        "Run",
        vec!["Best epoch".into(), "Dev loss".into(), "Dev macro-F1".into()],
    )
}

/// Interprets a JSON file as a result table, a single run record or a
/// sequence summary.
fn load_report_input(path: &Path) -> Result<ResultTable> {
    let value = read_json_value(path)?;
    if let Ok(table) = serde_json::from_value::<ResultTable>(value.clone()) {
        return Ok(table);
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if let Ok(record) = serde_json::from_value::<RunRecord>(value.clone()) {
        let mut table = record_table();
        table.push_row(record.language.clone().unwrap_or(name), record_row(&record));
        return Ok(table);
    }
    if let Some(stages) = value.get("stages").cloned() {
        let stages: Vec<StageRecord> =
            serde_json::from_value(stages).with_context(|| format!("invalid stage records in {}", path.display()))?;
        let mut table = record_table();
        for (i, s) in stages.iter().enumerate() {
            table.push_row(format!("{} {}", i + 1, s.language), record_row(&s.record));
        }
        return Ok(table);
    }
    Err(anyhow!(
        "{} is neither a result table nor a run record",
        path.display()
    ))
}

fn report_cmd(a: &ReportArgs, command: &Command) -> Result<()> {
    let tables = a
        .inputs
        .iter()
        .map(|p| load_report_input(p))
        .collect::<Result<Vec<_>>>()?;
    let (format, ext) = match a.format {
        FormatArg::Csv => (ReportFormat::Csv, "csv"),
        FormatArg::Markdown => (ReportFormat::Markdown, "md"),
    };
    let rendered: Vec<String> = tables.iter().map(|t| t.render(format)).collect();
    let body = rendered.join("\n");
    create_out(&a.common.out)?;
    let path: PathBuf = a.common.out.join(format!("report.{ext}"));
    fs::write(&path, &body).with_context(|| format!("cannot write {}", path.display()))?;
    write_run::<()>(&a.common.out, command, None)?;
    print!("{body}");
    Ok(())
}
