use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, TrainNoise};
use super::data::{run_eval, stream, Prepared};
use super::metrics::{metrics_from_logits, Metrics};
use crate::datasets::{class_histogram, split, ClassHistogram, LabeledDataset, Provenance, Split};
use crate::diffcore::{adamw_step, OptimizerState, Tape, Tensor};
use crate::io::write_atomic;
use crate::model::{forward, save_checkpoint, Checkpoint, Mode, ModelConfig, ModelParams, Session};
use crate::rng::{derive_seed, rng_from_seed, GENERATOR_NAME};
use crate::sigproc::NoiseSpec;
use crate::{Error, Result};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const RUN_RECORD_FILE: &str = "run.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean train-mode loss over the epoch's batches.
    pub train_loss: f64,
    /// Train-mode accuracy over the epoch's batches.
    pub train_accuracy: f64,
    /// `None` when the split has no validation segments.
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub provenance: Provenance,
    pub classes: Vec<String>,
    pub split_seed: Option<u64>,
    pub histogram: ClassHistogram,
}

/// Everything needed to reconstruct a run. Wall-clock time lives in a
/// separate `timing.json` so that identical runs give identical records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub generator: String,
    pub dataset: DatasetSummary,
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept; the last epoch when there
    /// is no validation split.
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    /// Eval-mode metrics of the kept parameters on the train split.
    pub train_metrics: Metrics,
    pub test_metrics: Metrics,
    /// False when every learnable tensor is bit-identical to its initial value.
    pub params_changed: bool,
    pub checkpoint: Option<String>,
}

pub struct TrainOutcome {
    pub record: RunRecord,
    pub params: ModelParams<f32>,
    pub wall_clock_s: f64,
}

fn ensure_split(dataset: &LabeledDataset, cfg: &TrainConfig) -> Result<LabeledDataset> {
    match dataset.tags {
        Some(_) => Ok(dataset.clone()),
        None => split(dataset, cfg.split, cfg.seed),
    }
}

fn non_empty(dataset: &LabeledDataset, s: Split) -> Result<Vec<usize>> {
    let idx = dataset.indices(s);
    if idx.is_empty() {
        return Err(Error::EmptySplit(format!("{s:?}").to_lowercase()));
    }
    Ok(idx)
}

fn train_noise(cfg: &TrainConfig, data: &Prepared, epoch: usize, i: usize) -> Option<NoiseSpec> {
    let seed = derive_seed(
        derive_seed(derive_seed(cfg.seed, stream::TRAIN_NOISE), epoch as u64),
        data.source_index[i] as u64,
    );
    match cfg.train_noise {
        TrainNoise::None => None,
        TrainNoise::Fixed { snr_db } => Some(NoiseSpec { snr_db, seed }),
        TrainNoise::Uniform { lo_db, hi_db } => {
            let u: f64 = rng_from_seed(seed ^ 0x5EED).random();
            Some(NoiseSpec {
                snr_db: lo_db + u * (hi_db - lo_db),
                seed,
            })
        }
    }
}

/// Mini-batch AdamW on cross-entropy, keeping the parameters with the best
/// validation accuracy (earliest epoch on ties). Without validation segments
/// the final parameters are kept.
pub fn train(dataset: &LabeledDataset, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let started = Instant::now();
    model.validate()?;
    cfg.validate()?;
    if dataset.num_classes() != model.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model expects {}",
            dataset.num_classes(),
            model.num_classes
        )));
    }
    let dataset = ensure_split(dataset, cfg)?;
    let train_idx = non_empty(&dataset, Split::Train)?;
    let val_idx = dataset.indices(Split::Val);
    let test_idx = dataset.indices(Split::Test);
    let train_data = Prepared::new(&dataset, &train_idx, cfg.feature_mode);
    let val_data = Prepared::new(&dataset, &val_idx, cfg.feature_mode);
    let test_data = Prepared::new(&dataset, &test_idx, cfg.feature_mode);
    if train_data.len() < 2 {
        return Err(Error::EmptySplit("train (needs at least 2 segments)".into()));
    }

    let mut params: ModelParams<f32> = ModelParams::init(model, derive_seed(cfg.seed, stream::INIT))?;
    let initial = params.params.clone();
    let mut opt = OptimizerState::new(cfg.adamw());
    let eval_seed = derive_seed(cfg.seed, stream::EVAL_NOISE);
    let k = model.num_classes;

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, Option<f64>, ModelParams<f32>)> = None;
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_from_seed(derive_seed(derive_seed(cfg.seed, stream::ORDER), epoch as u64)));
        let dropout_base = derive_seed(derive_seed(cfg.seed, stream::DROPOUT), epoch as u64);
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            if batch.len() < 2 {
                continue;
            }
            let x = train_data.batch::<f32>(batch, |i| train_noise(cfg, &train_data, epoch, i))?;
            let labels: Vec<usize> = batch.iter().map(|&i| train_data.labels[i]).collect();
            let tape = Tape::new();
            let session = Session::new(&tape, model, &params, Mode::Train, derive_seed(dropout_base, b as u64), true)?;
            let out = forward(&session, tape.constant(x))?;
            let loss = out.logits.cross_entropy(&labels)?;
            let loss_value = loss.value().data()[0] as f64;
            if !loss_value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: loss_value,
                });
            }
            let logits = out.logits.value();
            correct += logits
                .argmax_rows()
                .iter()
                .zip(&labels)
                .filter(|(p, y)| p == y)
                .count();
            loss_sum += loss_value * batch.len() as f64;
            seen += batch.len();
            let grads = tape.backward(loss)?;
            let grad_map: BTreeMap<String, Tensor<f32>> = session
                .param_vars()
                .iter()
                .map(|(name, &v)| (name.clone(), grads.wrt(v)))
                .collect();
            let stats = session.take_bn_stats();
            drop(session);
            adamw_step(&mut params.params, &grad_map, &mut opt)?;
            for (layer, mean, var) in stats {
                params.update_bn(&layer, &mean, &var, model.bn_momentum);
            }
        }
        let vm = if val_data.is_empty() {
            None
        } else {
            let val = run_eval(model, &params, &val_data, cfg.eval_snr_db, eval_seed)?;
            Some(metrics_from_logits(&val.logits, &val_data.labels, k)?)
        };
        epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            train_accuracy: correct as f64 / seen.max(1) as f64,
            val_loss: vm.as_ref().and_then(|m| m.loss),
            val_accuracy: vm.as_ref().map(|m| m.accuracy),
        });
        let improved = match (&best, &vm) {
            (None, _) | (_, None) => true,
            (Some((_, best_acc, _)), Some(m)) => best_acc.is_none_or(|b| m.accuracy > b),
        };
        if improved {
            best = Some((epoch, vm.map(|m| m.accuracy), params.clone()));
        }
    }
    let (best_epoch, best_val_accuracy, best_params) = best.expect("at least one epoch");

    let train_eval = run_eval(model, &best_params, &train_data, cfg.eval_snr_db, eval_seed)?;
    let test_eval = run_eval(model, &best_params, &test_data, cfg.eval_snr_db, eval_seed)?;
    let params_changed = best_params.params != initial;
    let record = RunRecord {
        model: model.clone(),
        train: cfg.clone(),
        seed: cfg.seed,
        generator: GENERATOR_NAME.to_string(),
        dataset: DatasetSummary {
            provenance: dataset.provenance.clone(),
            classes: dataset.classes.clone(),
            split_seed: dataset.split_seed,
            histogram: class_histogram(&dataset),
        },
        epochs,
        best_epoch,
        best_val_accuracy,
        train_metrics: metrics_from_logits(&train_eval.logits, &train_data.labels, k)?,
        test_metrics: metrics_from_logits(&test_eval.logits, &test_data.labels, k)?,
        params_changed,
        checkpoint: None,
    };
    Ok(TrainOutcome {
        record,
        params: best_params,
        wall_clock_s: started.elapsed().as_secs_f64(),
    })
}

#[derive(Serialize)]
struct Timing {
    wall_clock_s: f64,
}

/// Trains and writes `model.ckpt`, `run.json` and `timing.json` into `out_dir`.
pub fn train_to_dir(
    dataset: &LabeledDataset,
    model: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    let mut outcome = train(dataset, model, cfg)?;
    write_run(&mut outcome, out_dir)?;
    Ok(outcome)
}

pub fn write_run(outcome: &mut TrainOutcome, out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let ckpt = out_dir.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &outcome.record.model, &outcome.params)?;
    outcome.record.checkpoint = Some(CHECKPOINT_FILE.to_string());
    let run = out_dir.join(RUN_RECORD_FILE);
    write_atomic(&run, &serde_json::to_vec_pretty(&outcome.record)?)?;
    write_atomic(
        &out_dir.join(TIMING_FILE),
        &serde_json::to_vec_pretty(&Timing {
            wall_clock_s: outcome.wall_clock_s,
        })?,
    )?;
    Ok(run)
}

/// Convenience for callers holding a trained outcome.
pub fn outcome_checkpoint(outcome: &TrainOutcome) -> Checkpoint {
    Checkpoint {
        config: outcome.record.model.clone(),
        params: outcome.params.clone(),
    }
}
