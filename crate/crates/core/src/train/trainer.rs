use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adamw::{adamw_step, OptimizerState};
use super::early_stop::{EarlyStopping, Verdict};
use super::loss::cross_entropy;
use super::{EpochRecord, RunRecord, TrainConfig};
use crate::checkpoint::{save_classifier, tensor_digest};
use crate::corpus::{ClassLabel, Dataset};
use crate::error::{Error, Result};
use crate::eval::{argmax_label, macro_f1};
use crate::exec::Execution;
use crate::model::{Classifier, Example, ModelParams};
use crate::tensor::{accumulate, ParamSet};

/// Examples per gradient partial sum. Partial sums are reduced in order, so
/// results do not depend on the thread count or execution mode.
pub const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub exec: Execution,
    /// Where to write the best checkpoint, if anywhere.
    pub checkpoint_dir: Option<PathBuf>,
    pub language: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub record: RunRecord,
    pub best: ModelParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub loss: f64,
    pub macro_f1: f64,
    pub predictions: Vec<ClassLabel>,
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Eval-mode loss, macro-F1 and predictions over labeled examples.
pub fn evaluate(model: &Classifier, examples: &[Example], exec: Execution) -> Result<EvalOutcome> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let scored = exec.map(examples, |ex| -> Result<(f64, ClassLabel, ClassLabel)> {
        let gold = ex.label.ok_or_else(|| Error::UnlabeledRow(ex.sentence_id.clone()))?;
        let logits = model.logits(ex)?;
        Ok((cross_entropy(&logits, gold.index())?, argmax_label(&logits), gold))
    });
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(examples.len());
    let mut golds = Vec::with_capacity(examples.len());
    for s in scored {
        let (l, p, g) = s?;
        loss += l;
        predictions.push(p);
        golds.push(g);
    }
    let report = macro_f1(&predictions, &golds)?;
    Ok(EvalOutcome {
        loss: loss / examples.len() as f64,
        macro_f1: report.macro_f1,
        predictions,
    })
}

/// Adds `scale ×` the loss gradient of every example in `batch` into `grad`
/// and returns the sum of unscaled losses.
fn accumulate_batch(
    model: &Classifier,
    batch: &[(&Example, u64)],
    scale: f64,
    grad: &mut ModelParams,
    exec: Execution,
) -> Result<f64> {
    let chunks: Vec<&[(&Example, u64)]> = batch.chunks(GRAD_CHUNK).collect();
    let partials = exec.map(&chunks, |chunk| -> Result<(f64, ModelParams)> {
        let mut g = model.zero_grads();
        let mut loss = 0.0;
        for (ex, seed) in chunk.iter() {
            loss += model.accumulate_example(ex, Some(*seed), scale, &mut g)?;
        }
        Ok((loss, g))
    });
    let mut total = 0.0;
    for p in partials {
        let (loss, g) = p?;
        total += loss;
        accumulate(grad, &g);
    }
    Ok(total)
}

pub fn train_model(model: &mut Classifier, train: &Dataset, dev: &Dataset, config: &TrainConfig, options: &TrainOptions) -> Result<TrainOutcome> {
    if train.is_empty() || dev.is_empty() {
        return Err(Error::EmptyDataset);
    }
    train.labels()?;
    dev.labels()?;
    let train_ex = model.prepare(&train.rows, options.exec)?;
    let dev_ex = model.prepare(&dev.rows, options.exec)?;
    train_on_examples(model, &train_ex, &dev_ex, config, options)
}

/// Training loop over prepared examples. On return `model` holds the
/// parameters of the epoch with the lowest dev loss (or its initial
/// parameters when no epoch ran).
pub fn train_on_examples(
    model: &mut Classifier,
    train: &[Example],
    dev: &[Example],
    config: &TrainConfig,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let exec = options.exec;
    let adamw = config.adamw();
    let total_steps = config.total_steps(train.len());
    let initial_checkpoint = tensor_digest(model);

    let mut state = OptimizerState::new();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.snapshot();
    let mut best_f1 = None;
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, epoch as u64));
        order.shuffle(&mut rng);
        let epoch_seed = mix(config.seed ^ 0xD1B5_4A32_D192_ED03, epoch as u64);
        let seeded: Vec<(&Example, u64)> = order
            .iter()
            .enumerate()
            .map(|(pos, &i)| (&train[i], mix(epoch_seed, pos as u64)))
            .collect();

        let mut loss_sum = 0.0;
        let micro: Vec<&[(&Example, u64)]> = seeded.chunks(config.batch_size).collect();
        for window in micro.chunks(config.grad_accum_steps) {
            let mut grad = model.zero_grads();
            for batch in window {
                let scale = 1.0 / (batch.len() * config.grad_accum_steps) as f64;
                loss_sum += accumulate_batch(model, batch, scale, &mut grad, exec)?;
            }
            step += 1;
            let lr = config.lr_at(step, total_steps);
            adamw_step(model, &grad, &mut state, lr, &adamw)?;
        }

        let train_loss = loss_sum / train.len() as f64;
        let eval = evaluate(model, dev, exec)?;
        if !train_loss.is_finite() || !eval.loss.is_finite() {
            return Err(Error::DivergedLoss {
                epoch,
                loss: if train_loss.is_finite() { eval.loss } else { train_loss },
            });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            dev_loss: eval.loss,
            dev_macro_f1: eval.macro_f1,
        });
        match stopper.observe(epoch, eval.loss) {
            Verdict::Improved => {
                best = model.snapshot();
                best_f1 = Some(eval.macro_f1);
            }
            Verdict::Worse => {}
            Verdict::Stop => {
                stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }

    model.restore(&best);
    let best_checkpoint = match &options.checkpoint_dir {
        Some(dir) => {
            save_classifier(model, dir)?;
            Some(dir.display().to_string())
        }
        None => None,
    };
    let record = RunRecord {
        config: config.clone(),
        language: options.language.clone(),
        initial_checkpoint,
        best_epoch: stopper.best_epoch(),
        best_dev_loss: stopper.best_epoch().map(|_| stopper.best_loss()),
        best_dev_macro_f1: best_f1,
        best_digest: tensor_digest(&best),
        best_checkpoint,
        epochs,
        stopped_early,
    };
    debug_assert_eq!(best.num_params(), model.num_params());
    Ok(TrainOutcome { record, best })
}
