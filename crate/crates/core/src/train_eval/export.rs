use serde::{Deserialize, Serialize};

use super::data::{run_eval, Prepared};
use super::eval::{check_classes, split_indices};
use crate::datasets::{LabeledDataset, Split};
use crate::model::Checkpoint;
use crate::sigproc::FeatureMode;
use crate::Result;

/// Classifier-input vectors (pooled stage-3 plus long skip) with labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub width: usize,
    pub rows: Vec<(Vec<f32>, usize)>,
}

impl FeatureTable {
    /// Header `f0..f{w-1},label`; floats in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut s: String = (0..self.width).map(|i| format!("f{i},")).collect();
        s.push_str("label\n");
        for (v, label) in &self.rows {
            for x in v {
                s.push_str(&format!("{x},"));
            }
            s.push_str(&format!("{label}\n"));
        }
        s
    }
}

/// Clean, eval-mode features for every segment of `split` (or all segments).
pub fn export_features(
    checkpoint: &Checkpoint,
    dataset: &LabeledDataset,
    split: Option<Split>,
    mode: FeatureMode,
) -> Result<FeatureTable> {
    check_classes(checkpoint, dataset)?;
    let idx = split_indices(dataset, split)?;
    let data = Prepared::new(dataset, &idx, mode);
    let out = run_eval(&checkpoint.config, &checkpoint.params, &data, None, 0)?;
    let w = out.feature_width;
    Ok(FeatureTable {
        width: w,
        rows: out
            .features
            .chunks(w.max(1))
            .zip(&data.labels)
            .map(|(f, &l)| (f.to_vec(), l))
            .collect(),
    })
}
