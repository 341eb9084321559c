use super::data::{run_eval, Prepared};
use super::metrics::{metrics_from_logits, Metrics};
use crate::datasets::{LabeledDataset, Split};
use crate::model::Checkpoint;
use crate::sigproc::FeatureMode;
use crate::{Error, Result};

/// Indices of `split`, or every segment when `split` is `None`.
pub fn split_indices(dataset: &LabeledDataset, split: Option<Split>) -> Result<Vec<usize>> {
    let idx = match split {
        Some(s) => {
            if dataset.tags.is_none() {
                return Err(Error::InvalidArgument(format!("dataset has no split tags, cannot select {s:?}")));
            }
            dataset.indices(s)
        }
        None => (0..dataset.len()).collect(),
    };
    if idx.is_empty() {
        return Err(Error::EmptySplit(format!("{split:?}").to_lowercase()));
    }
    Ok(idx)
}

pub(crate) fn check_classes(checkpoint: &Checkpoint, dataset: &LabeledDataset) -> Result<()> {
    if checkpoint.config.num_classes != dataset.num_classes() {
        return Err(Error::Config(format!(
            "checkpoint predicts {} classes, dataset has {}",
            checkpoint.config.num_classes,
            dataset.num_classes()
        )));
    }
    Ok(())
}

/// Eval-mode metrics on one split. `snr_db = None` (or infinite) is clean;
/// otherwise segment `i` gets noise seeded from `(noise_seed, i)`.
pub fn evaluate(
    checkpoint: &Checkpoint,
    dataset: &LabeledDataset,
    split: Option<Split>,
    snr_db: Option<f64>,
    noise_seed: u64,
    mode: FeatureMode,
) -> Result<Metrics> {
    check_classes(checkpoint, dataset)?;
    let idx = split_indices(dataset, split)?;
    let data = Prepared::new(dataset, &idx, mode);
    let out = run_eval(&checkpoint.config, &checkpoint.params, &data, snr_db, noise_seed)?;
    metrics_from_logits(&out.logits, &data.labels, checkpoint.config.num_classes)
}
