//! Acceptance suite: one PASS/FAIL line per criterion, then a single
//! assertion that every criterion passed.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use subjfuse::checkpoint::{read_manifest, tensor_digest};
use subjfuse::corpus::{ClassLabel, Dataset, Split};
use subjfuse::encoder::TinyEncoderConfig;
use subjfuse::eval::macro_f1;
use subjfuse::fusion::{gate, ConcatHeadParams, FusionMode, HeadConfig, HeadInput, HeadParams};
use subjfuse::lexical::{fit_vectorizer, SparseVector, TfidfConfig};
use subjfuse::model::{Architecture, Classifier, HeadOptions};
use subjfuse::nn::Linear;
use subjfuse::orchestrate::{
    train_sequence, zero_shot, AblationVariant, EncoderRecipe, InitialCheckpoint, ModelRecipe, SequenceOptions,
    SequencePlan, Stage, TfidfFit,
};
use subjfuse::posfeat::{PosDistribution, PosSource};
use subjfuse::synth::{generate, SynthConfig};
use subjfuse::tensor::{ParamSet, Tensor};
use subjfuse::train::{adamw_step, early_stop, lr_at, train_model, AdamWConfig, OptimizerState, SchedulerKind, TrainConfig, TrainOptions};
use subjfuse::Execution;
use support::*;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ------------------------------------------------------------ gradients

fn gradient_correctness() -> Check {
    let start = Instant::now();
    let mut worst: (f64, String) = (0.0, String::new());
    let mut tensors = 0;
    let mut models: Vec<Classifier> = vec![
        tiny_gated(3, FusionMode::Gated),
        tiny_gated(11, FusionMode::Gated),
        tiny_gated(5, FusionMode::Ungated),
        tiny_gated(5, FusionMode::EncoderOnly),
        concat_model(7, 8),
    ];
    for model in &mut models {
        let examples = model.prepare(&rows(&GRAD_TEXTS, "g"), Execution::Sequential).unwrap();
        for train_mode in [false, true] {
            let seeds: Vec<Option<u64>> = (0..examples.len()).map(|i| train_mode.then_some(1000 + i as u64)).collect();
            for c in gradient_check(model, &examples, &seeds, 1e-4) {
                tensors += 1;
                if c.rel_error > worst.0 {
                    worst = (c.rel_error, c.name);
                }
            }
        }
    }
    let elapsed = start.elapsed();
    ensure!(worst.0 <= 1e-4, "{} rel error {:.2e} > 1e-4", worst.1, worst.0);
    ensure!(elapsed < Duration::from_secs(60), "took {:.1}s", elapsed.as_secs_f64());
    Ok(format!(
        "{tensors} tensor checks, max rel error {:.2e} ({}), {:.1}s",
        worst.0,
        worst.1,
        elapsed.as_secs_f64()
    ))
}

// ------------------------------------------------------------ TF-IDF

fn random_doc(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(0..=30);
    (0..len).map(|_| b"abcab AB c"[rng.random_range(0..10)] as char).collect()
}

fn tfidf_oracle_agreement() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut fitted = 0;
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let n = rng.random_range(1..=20);
        let docs: Vec<String> = (0..n).map(|_| random_doc(&mut rng)).collect();
        let cfg = TfidfConfig {
            n_min: rng.random_range(1..=3),
            n_max: rng.random_range(3..=6),
            max_features: rng.random_range(1..=60),
            min_df: rng.random_range(1..=3),
            lowercase: rng.random_bool(0.5),
        };
        let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
        let queries: Vec<String> = (0..5).map(|_| random_doc(&mut rng)).chain(docs.iter().cloned()).collect();
        let qrefs: Vec<&str> = queries.iter().map(String::as_str).collect();
        let oracle = tfidf_oracle(&refs, &qrefs, &cfg);
        let model = match fit_vectorizer(&refs, cfg) {
            Ok(m) => m,
            Err(_) => {
                ensure!(oracle.features.is_empty(), "case {case}: fit failed but the oracle kept features");
                continue;
            }
        };
        fitted += 1;
        ensure!(model.features == oracle.features, "case {case}: vocabulary differs");
        ensure!(model.dim() <= cfg.max_features, "case {case}: {} > max_features", model.dim());
        for (q, want) in qrefs.iter().zip(&oracle.rows) {
            for (g, w) in model.transform(q).to_dense().iter().zip(want) {
                worst = worst.max((g - w).abs());
            }
        }
    }
    ensure!(worst <= 1e-12, "max component error {worst:.2e}");
    ensure!(fitted >= 40, "only {fitted} corpora produced a vocabulary");

    let docs = ["abcd", "abce", "xyz"];
    let cfg = TfidfConfig {
        n_min: 3,
        n_max: 3,
        max_features: 100,
        min_df: 2,
        lowercase: true,
    };
    ensure!(fit_vectorizer(&docs, cfg).unwrap().features == ["abc"], "min_df not respected");
    Ok(format!("50 corpora ({fitted} fitted), max component error {worst:.1e}"))
}

// ------------------------------------------------------------ metric

fn metric_oracle_agreement() -> Check {
    use ClassLabel::{Obj as O, Subj as S};
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let pick = |rng: &mut ChaCha8Rng, p: f64| if rng.random_bool(p) { S } else { O };
    for case in 0..1000 {
        let n = rng.random_range(1..=50);
        let bias: f64 = rng.random_range(0.0..=1.0);
        let golds: Vec<ClassLabel> = (0..n).map(|_| pick(&mut rng, bias)).collect();
        let preds: Vec<ClassLabel> = (0..n).map(|_| pick(&mut rng, bias)).collect();
        let got = macro_f1(&preds, &golds).unwrap().macro_f1;
        ensure!(got.to_bits() == macro_f1_oracle(&preds, &golds).to_bits(), "case {case} differs");
    }
    let hand = macro_f1(&[O, S, S, S], &[O, O, S, S]).unwrap().macro_f1;
    ensure!((hand - 0.733_333_333_333_333_3).abs() <= 1e-9, "hand case {hand}");
    Ok(format!("1000 cases bit-exact, hand case {hand:.6}"))
}

// ------------------------------------------------------------ gating

fn gating_invariants() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = Linear::new(16, 1, &mut rng);
    let (mut lo, mut hi) = (1.0f64, 0.0f64);
    for i in 0..100_000 {
        if i % 1000 == 0 {
            let scale = rng.random_range(0.0..20.0);
            params.visit_mut(&mut |_, t: &mut Tensor| {
                for v in &mut t.data {
                    *v = rng.random_range(-scale..=scale);
                }
            });
        }
        let h: Vec<f64> = (0..16).map(|_| rng.random_range(-100.0..100.0)).collect();
        let g = gate(&h, &params).unwrap();
        ensure!(g > 0.0 && g < 1.0, "g = {g} outside (0,1)");
        lo = lo.min(g);
        hi = hi.max(g);
    }

    let gated = tiny_gated(21, FusionMode::Gated);
    let mut ungated = tiny_gated(21, FusionMode::Ungated);
    let src: HashMap<String, Vec<f64>> = gated.named().into_iter().map(|(n, t)| (n, t.data.clone())).collect();
    ungated.visit_mut(&mut |name, t| {
        if let Some(v) = src.get(name) {
            t.data.copy_from_slice(v);
        }
    });
    let mut max_diff: f64 = 0.0;
    for ex in &gated.prepare(&rows(&GRAD_TEXTS, "g"), Execution::Sequential).unwrap() {
        let (a, _) = gated.forward_with_gate(ex, None, Some(1.0)).unwrap();
        let (b, _) = ungated.forward(ex, None).unwrap();
        for c in 0..2 {
            max_diff = max_diff.max((a[c] - b[c]).abs());
        }
    }
    ensure!(max_diff <= 1e-6, "g=1 differs from ungated by {max_diff:.2e}");

    let zero = Linear::zeros(8, 1);
    for _ in 0..100 {
        let h: Vec<f64> = (0..8).map(|_| rng.random_range(-5.0..5.0)).collect();
        let g = gate(&h, &zero).unwrap();
        ensure!((g - 0.5).abs() <= 1e-12, "zero gate gives {g}");
    }
    Ok(format!("1e5 gates in [{lo:.3e}, 1-{:.3e}], g=1 vs ungated {max_diff:.1e}", 1.0 - hi))
}

// ------------------------------------------------------------ dimensions

fn dimension_contract() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let head = HeadParams::Concat(ConcatHeadParams::new(&HeadConfig::new(768, 50), &mut rng));
    let width = head.stack().input_dim();
    ensure!(width == 960, "joint width {width}");
    let h = vec![0.1; 768];
    let tfidf = SparseVector {
        indices: vec![3],
        values: vec![1.0],
        dim: 50,
    };
    let pos = PosDistribution::uniform();
    let (logits, _) = head
        .forward(
            HeadInput {
                h: &h,
                tfidf: &tfidf,
                pos: Some(&pos),
            },
            None,
        )
        .map_err(|e| e.to_string())?;
    ensure!(logits.iter().all(|v| v.is_finite()), "non-finite logits");
    let short = vec![0.1; 767];
    let bad = HeadInput {
        h: &short,
        tfidf: &tfidf,
        pos: Some(&pos),
    };
    ensure!(head.forward(bad, None).is_err(), "767-wide encoder output accepted");
    Ok("768 + 64 + 128 = 960".into())
}

// ------------------------------------------------------------ training mechanics

const TRAIN: [&str; 12] = [
    "the cat sat on the mat",
    "i think the cat is wonderful",
    "a dog ran to the park",
    "honestly the park is awful",
    "the mat is red",
    "i love a red dog",
    "the park opens at nine",
    "i feel the mat is ugly",
    "a red cat ran",
    "i believe dogs are great",
    "the dog sat",
    "truly a lovely park",
];

fn training_mechanics() -> Check {
    let train = dataset(&TRAIN, "en", Split::Train);
    let dev = dataset(&TRAIN[..4], "en", Split::Dev);
    let base = TrainConfig {
        learning_rate: 1e-3,
        max_epochs: 1,
        warmup_steps: 1,
        scheduler: SchedulerKind::Cosine,
        ..TrainConfig::gated_preset()
    };
    let mut a = tiny_gated(2, FusionMode::Gated);
    let mut b = a.clone();
    let initial = a.clone();
    let accum = TrainConfig {
        batch_size: 3,
        grad_accum_steps: 4,
        ..base.clone()
    };
    let single = TrainConfig {
        batch_size: 12,
        grad_accum_steps: 1,
        ..base
    };
    let opts = TrainOptions::default();
    train_model(&mut a, &train, &dev, &accum, &opts).map_err(|e| e.to_string())?;
    train_model(&mut b, &train, &dev, &single, &opts).map_err(|e| e.to_string())?;
    let mut accum_diff: f64 = 0.0;
    for ((_, ta), (_, tb)) in a.named().iter().zip(&b.named()) {
        for (x, y) in ta.data.iter().zip(&tb.data) {
            accum_diff = accum_diff.max((x - y).abs());
        }
    }
    ensure!(accum_diff <= 1e-10, "accumulation differs by {accum_diff:.2e}");
    ensure!(tensor_digest(&a) != tensor_digest(&initial), "parameters did not move");

    let trace = early_stop::trace(&[0.9, 0.8, 0.85, 0.82, 0.81], 3);
    ensure!(trace == (5, Some(2)), "early stop trace {trace:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut layer = Linear::new(4, 3, &mut rng);
    let mut flat: Vec<f64> = layer.named().iter().flat_map(|(_, t)| t.data.clone()).collect();
    let cfg = AdamWConfig {
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
        weight_decay: 0.01,
    };
    let mut state = OptimizerState::new();
    let mut reference = AdamRef::new(flat.len());
    let mut adam_diff: f64 = 0.0;
    for step in 1..=10 {
        let mut grad = layer.zeros_like();
        grad.visit_mut(&mut |_, t: &mut Tensor| {
            for v in &mut t.data {
                *v = rng.random_range(-2.0..2.0);
            }
        });
        let g: Vec<f64> = grad.named().iter().flat_map(|(_, t)| t.data.clone()).collect();
        let lr = 1e-3 * step as f64;
        adamw_step(&mut layer, &grad, &mut state, lr, &cfg).map_err(|e| e.to_string())?;
        reference.step(&mut flat, &g, lr, cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay);
        let got: Vec<f64> = layer.named().iter().flat_map(|(_, t)| t.data.clone()).collect();
        for (x, y) in got.iter().zip(&flat) {
            adam_diff = adam_diff.max((x - y).abs());
        }
    }
    ensure!(adam_diff <= 1e-10, "AdamW differs by {adam_diff:.2e}");

    let lr = lr_at(1e-5, SchedulerKind::Linear, 100, 1000, 50);
    ensure!((lr - 5e-6).abs() <= 1e-18, "lr_at(50) = {lr}");
    Ok(format!(
        "accumulation {accum_diff:.1e}, early stop {trace:?}, AdamW {adam_diff:.1e}, lr_at(50) {lr:e}"
    ))
}

// ------------------------------------------------------------ separability

fn separability() -> Check {
    let synth = SynthConfig::default();
    let langs = generate(&synth).map_err(|e| e.to_string())?;
    let total: usize = langs
        .iter()
        .map(|l| l.train.len() + l.dev.len() + l.eval.as_ref().map_or(0, Dataset::len))
        .sum();
    ensure!(total == 400, "{total} sentences");
    let merge = |pick: &dyn Fn(&subjfuse::orchestrate::LanguageData) -> &Dataset, split| {
        Dataset::new("xa+xb", split, langs.iter().flat_map(|l| pick(l).rows.clone()).collect())
    };
    let train = merge(&|l| &l.train, Split::Train);
    let dev = merge(&|l| &l.dev, Split::Dev);
    let texts: Vec<&str> = train.texts().collect();
    // the character cue never reaches the encoder vocabulary
    let vocab = subjfuse::encoder::build_vocab(&texts, synth.max_vocab()).map_err(|e| e.to_string())?;
    let cue_tokens: Vec<&str> = texts
        .iter()
        .flat_map(|t| t.split_whitespace())
        .filter(|w| w.contains(&synth.char_cue))
        .collect();
    ensure!(!cue_tokens.is_empty(), "no character cue in the training data");
    ensure!(
        cue_tokens.iter().all(|w| !vocab.tokens().iter().any(|t| t == w)),
        "a character-cue word entered the encoder vocabulary"
    );

    let start = Instant::now();
    let seed = 1;
    let score = |fusion| -> Result<(f64, usize), String> {
        let recipe = ModelRecipe {
            arch: Architecture::Gated,
            fusion,
            encoder: EncoderRecipe::Tiny {
                config: TinyEncoderConfig {
                    dim: 16,
                    layers: 1,
                    heads: 2,
                    ff_dim: 32,
                    max_len: 32,
                    refine_heads: 2,
                    dropout: 0.1,
                },
                max_vocab: synth.max_vocab(),
            },
            tfidf: TfidfConfig {
                max_features: 300,
                ..TfidfConfig::default()
            },
            head: HeadOptions {
                proj_dim: 128,
                hidden: 64,
                dropout: 0.1,
            },
            pos: PosSource::Uniform,
            seed,
        };
        let exec = Execution::Sequential;
        let mut model = recipe.build(&texts, exec).map_err(|e| e.to_string())?;
        let cfg = TrainConfig {
            learning_rate: 2e-3,
            batch_size: 4,
            grad_accum_steps: 1,
            max_epochs: 30,
            patience: 5,
            warmup_steps: 10,
            seed,
            ..TrainConfig::gated_preset()
        };
        let opts = TrainOptions {
            exec,
            ..TrainOptions::default()
        };
        let out = train_model(&mut model, &train, &dev, &cfg, &opts).map_err(|e| e.to_string())?;
        Ok((zero_shot(&model, &dev, exec).map_err(|e| e.to_string())?, out.record.epochs.len()))
    };
    let (full, full_epochs) = score(FusionMode::Gated)?;
    let (enc, _) = score(FusionMode::EncoderOnly)?;
    let elapsed = start.elapsed();
    ensure!(full_epochs <= 30, "{full_epochs} epochs");
    ensure!(full >= 0.95, "Full macro-F1 {full:.4} < 0.95");
    ensure!(full > enc, "Full {full:.4} does not exceed EncoderOnly {enc:.4}");
    ensure!(elapsed <= Duration::from_secs(300), "took {:.0}s", elapsed.as_secs_f64());
    Ok(format!(
        "Full {full:.4} vs EncoderOnly {enc:.4} on {} dev sentences, {:.1}s on one thread",
        dev.len(),
        elapsed.as_secs_f64()
    ))
}

// ------------------------------------------------------------ chains

fn small_recipe(seed: u64) -> ModelRecipe {
    ModelRecipe {
        arch: Architecture::Gated,
        fusion: FusionMode::Gated,
        encoder: EncoderRecipe::Tiny {
            config: tiny_config(),
            max_vocab: 100,
        },
        tfidf: small_tfidf(),
        head: small_head(),
        pos: PosSource::Uniform,
        seed,
    }
}

fn chain_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 2,
        grad_accum_steps: 2,
        max_epochs: epochs,
        patience: 2,
        warmup_steps: 2,
        ..TrainConfig::gated_preset()
    }
}

fn chain_exactness() -> Check {
    let langs = generate(&SynthConfig {
        languages: vec!["de".into(), "it".into(), "en".into()],
        sentences_per_language: 30,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let mut stages: Vec<Stage> = langs
        .iter()
        .map(|l| Stage {
            data: l.clone(),
            config: chain_config(2),
        })
        .collect();
    stages[1].config.max_epochs = 0;
    let plan = SequencePlan {
        stages,
        initial: InitialCheckpoint::Fresh,
    };
    let dir = tempfile::tempdir().unwrap();
    let opts = SequenceOptions {
        exec: Execution::default(),
        out_dir: Some(dir.path().to_path_buf()),
        tfidf_fit: TfidfFit::Union,
    };
    let out = train_sequence(&plan, &small_recipe(1), &opts).map_err(|e| e.to_string())?;
    ensure!(out.stages.len() == 3, "{} stages", out.stages.len());
    for (i, w) in out.stages.windows(2).enumerate() {
        let saved = read_manifest(&dir.path().join(format!("stage-{}-{}", i + 1, w[0].language))).map_err(|e| e.to_string())?;
        ensure!(saved.digest == w[0].record.best_digest, "stage {} checkpoint digest", i + 1);
        ensure!(w[1].source_checkpoint == saved.digest, "stage {} does not start from stage {} checkpoint", i + 2, i + 1);
    }
    ensure!(
        out.stages[1].record.best_digest == out.stages[1].source_checkpoint,
        "0-epoch stage changed parameters"
    );

    let resumed = SequencePlan {
        stages: plan.stages[2..].to_vec(),
        initial: InitialCheckpoint::Path(dir.path().join("stage-2-it")),
    };
    let again = train_sequence(&resumed, &small_recipe(1), &SequenceOptions::default()).map_err(|e| e.to_string())?;
    ensure!(
        again.stages[0].record.best_digest == out.stages[2].record.best_digest,
        "resuming from a saved stage diverges"
    );
    Ok("3 stages linked by digest, 0-epoch stage is identity, resume is exact".into())
}

// ------------------------------------------------------------ CLI

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_subjfuse"))
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = bin().args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_plan(dir: &Path, languages: &[&str]) -> PathBuf {
    let data = generate(&SynthConfig {
        languages: languages.iter().map(|l| l.to_string()).collect(),
        sentences_per_language: 40,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut stages = Vec::new();
    for l in &data {
        let lang = &l.language;
        l.train.write_tsv(&dir.join(format!("{lang}-train.tsv"))).unwrap();
        l.dev.write_tsv(&dir.join(format!("{lang}-dev.tsv"))).unwrap();
        l.eval.as_ref().unwrap().write_tsv(&dir.join(format!("{lang}-test.tsv"))).unwrap();
        stages.push(json!({
            "language": lang,
            "train": format!("{lang}-train.tsv"),
            "dev": format!("{lang}-dev.tsv"),
            "dev_test": format!("{lang}-test.tsv"),
        }));
    }
    let plan = json!({
        "encoder": {"kind": "tiny", "max_vocab": 200, "config": {
            "dim": 8, "layers": 1, "heads": 2, "ff_dim": 16, "max_len": 16, "refine_heads": 2, "dropout": 0.1
        }},
        "tfidf": {"n_min": 3, "n_max": 4, "max_features": 100, "min_df": 1, "lowercase": true},
        "head": {"proj_dim": 16, "hidden": 16, "dropout": 0.1},
        "config": {"max_epochs": 2, "batch_size": 4, "grad_accum_steps": 1, "learning_rate": 0.002, "warmup_steps": 1},
        "stages": stages,
    });
    let path = dir.join("plan.json");
    fs::write(&path, serde_json::to_vec_pretty(&plan).unwrap()).unwrap();
    path
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let plan = write_plan(d, &["xa", "xb"]);
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("fit-vectorizer", vec!["fit-vectorizer".into(), "--in".into(), s(&d.join("xa-train.tsv")).into()]),
        (
            "train",
            [
                "train", "--train", s(&d.join("xa-train.tsv")), "--dev", s(&d.join("xa-dev.tsv")), "--lang", "xa",
                "--seed", "3", "--epochs", "2", "--lr", "0.002", "--batch-size", "4", "--grad-accum", "1", "--warmup", "1",
                "--encoder-dim", "8", "--encoder-layers", "1", "--encoder-heads", "2", "--ff-dim", "16", "--max-len",
                "16", "--refine-heads", "2", "--hidden", "16", "--proj-dim", "16", "--max-features", "100",
            ]
            .map(String::from)
            .to_vec(),
        ),
        ("train-sequence", vec!["train-sequence".into(), "--plan".into(), s(&plan).into(), "--seed".into(), "3".into()]),
        ("ablate", vec!["ablate".into(), "--plan".into(), s(&plan).into(), "--seed".into(), "3".into()]),
        (
            "order-study",
            vec!["order-study".into(), "--plan".into(), s(&plan).into(), "--all-permutations".into(), "--seed".into(), "3".into()],
        ),
    ];
    let mut files = 0;
    for (name, args) in &runs {
        let mut trees = Vec::new();
        for rep in 0..2 {
            let out = d.join(format!("{name}-{rep}"));
            let mut full: Vec<&str> = args.iter().map(String::as_str).collect();
            full.extend(["--out", s(&out)]);
            cli(&full)?;
            trees.push(tree(&out));
        }
        ensure!(!trees[0].is_empty(), "{name} wrote nothing");
        ensure!(trees[0] == trees[1], "{name}: outputs differ between runs");
        files += trees[0].len();
    }

    let mut outputs = Vec::new();
    for rep in 0..2 {
        let out = d.join(format!("predict-{rep}"));
        cli(&[
            "predict", "--checkpoint", s(&d.join("train-0/checkpoint")), "--in", s(&d.join("xa-test.tsv")), "--out",
            s(&out),
        ])?;
        let rep_dir = d.join(format!("report-{rep}"));
        cli(&["report", "--in", s(&d.join("ablate-0/ablation.json")), "--format", "csv", "--out", s(&rep_dir)])?;
        let scored = cli(&["evaluate", "--pred", s(&out.join("predictions.tsv")), "--gold", s(&d.join("xa-test.tsv"))])?;
        outputs.push((tree(&out), tree(&rep_dir), scored));
    }
    ensure!(outputs[0] == outputs[1], "predict/report/evaluate outputs differ");
    Ok(format!("8 commands repeated, {files} checkpoint/report files byte-identical"))
}

fn harness_shape() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let languages = ["de", "it", "en"];
    let plan = write_plan(d, &languages);
    cli(&["ablate", "--plan", s(&plan), "--out", s(&d.join("abl"))])?;
    cli(&["order-study", "--plan", s(&plan), "--all-permutations", "--out", s(&d.join("ord"))])?;

    let read = |p: PathBuf| -> serde_json::Value { serde_json::from_slice(&fs::read(p).unwrap()).unwrap() };
    let abl = read(d.join("abl/ablation.json"));
    let ord = read(d.join("ord/order_study.json"));
    let columns: Vec<&str> = languages.to_vec();
    for t in [&abl, &ord] {
        let cols: Vec<&str> = t["columns"].as_array().unwrap().iter().map(|c| c.as_str().unwrap()).collect();
        ensure!(cols == columns, "columns {cols:?}");
        for row in t["rows"].as_array().unwrap() {
            ensure!(row[1].as_array().unwrap().len() == columns.len(), "ragged row {row}");
        }
    }
    let labels = |t: &serde_json::Value| -> Vec<String> {
        t["rows"].as_array().unwrap().iter().map(|r| r[0].as_str().unwrap().to_string()).collect()
    };
    let want: Vec<String> = AblationVariant::ALL.iter().map(|v| v.label().to_string()).collect();
    ensure!(labels(&abl) == want, "ablation rows {:?}", labels(&abl));
    ensure!(abl["row_header"] == "Model configuration", "ablation header");
    let ord_rows = labels(&ord);
    ensure!(ord_rows.len() == 6, "{} permutations", ord_rows.len());
    ensure!(ord_rows.contains(&"(de → it → en)".to_string()), "order rows {ord_rows:?}");
    ensure!(ord["row_header"] == "Language order", "order header");
    let csv = fs::read_to_string(d.join("abl/ablation.csv")).unwrap();
    ensure!(csv.lines().count() == 5, "ablation csv has {} lines", csv.lines().count());
    let md = fs::read_to_string(d.join("ord/order_study.md")).unwrap();
    ensure!(md.lines().count() == 8, "order markdown has {} lines", md.lines().count());
    Ok(format!("ablation 4 x {n}, order study 6 x {n}", n = columns.len()))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("gradient correctness", gradient_correctness),
        ("tf-idf oracle", tfidf_oracle_agreement),
        ("metric oracle", metric_oracle_agreement),
        ("gating invariants", gating_invariants),
        ("dimension contract", dimension_contract),
        ("training mechanics", training_mechanics),
        ("end-to-end separability", separability),
        ("chain exactness", chain_exactness),
        ("determinism", determinism),
        ("harness shape", harness_shape),
    ];
    let hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        // written to the process stdout so the lines survive output capture
        let line = match result {
            Ok(detail) => format!("PASS  {name}: {detail}\n"),
            Err(why) => {
                failed.push(name);
                format!("FAIL  {name}: {why}\n")
            }
        };
        let mut out = std::io::stdout().lock();
        let _ = out.write_all(line.as_bytes());
        let _ = out.flush();
    }
    panic::set_hook(hook);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
