use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rashvit_core::datasets::{load_archive, split, synth_generate, LabeledDataset, SynthSpec, MANIFEST_FILE};
use rashvit_core::model::Checkpoint;
use rashvit_core::train_eval::{RunRecord, TrainConfig, RUN_RECORD_FILE};
use rashvit_core::ModelConfig;
use serde::{Deserialize, Serialize};

/// Where a run gets its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetRef {
    /// A `manifest.json`, or a directory holding one.
    Archive { path: PathBuf },
    /// A full synthetic spec.
    Synth { spec: SynthSpec },
    /// `SynthSpec::standard(classes, segments_per_class, seed)`.
    SynthStandard {
        classes: usize,
        segments_per_class: usize,
        #[serde(default)]
        seed: u64,
    },
}

/// The `--config` document of `train` and `ablate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub dataset: DatasetRef,
    /// Relative paths resolve against the config file's directory.
    pub out_dir: PathBuf,
}

pub struct LoadedConfig {
    pub file: RunConfigFile,
    pub base: PathBuf,
}

impl LoadedConfig {
    pub fn out_dir(&self) -> PathBuf {
        self.base.join(&self.file.out_dir)
    }

    pub fn dataset(&self) -> Result<LabeledDataset> {
        load_dataset(&self.file.dataset, &self.base)
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let value = serde_json::from_slice(&bytes).with_context(|| format!("invalid {}", path.display()))?;
    Ok(value)
}

pub fn load_run_config(path: &Path) -> Result<LoadedConfig> {
    let file: RunConfigFile = read_json(path)?;
    file.model.validate().with_context(|| format!("model section of {}", path.display()))?;
    file.train.validate().with_context(|| format!("train section of {}", path.display()))?;
    Ok(LoadedConfig {
        file,
        base: parent_dir(path),
    })
}

pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn load_dataset(reference: &DatasetRef, base: &Path) -> Result<LabeledDataset> {
    Ok(match reference {
        DatasetRef::Archive { path } => load_archive(&manifest_path(&base.join(path)))?,
        DatasetRef::Synth { spec } => synth_generate(spec)?,
        DatasetRef::SynthStandard {
            classes,
            segments_per_class,
            seed,
        } => synth_generate(&SynthSpec::standard(*classes, *segments_per_class, *seed))?,
    })
}

/// The run record written next to a checkpoint, if any.
pub fn sibling_record(checkpoint: &Path) -> Result<Option<RunRecord>> {
    let path = parent_dir(checkpoint).join(RUN_RECORD_FILE);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(read_json(&path)?))
}

/// Re-applies the training split so `--split test` means the same segments
/// the run held out. `split_seed` overrides the seed from `run.json`.
pub fn tag_like_training(
    dataset: LabeledDataset,
    record: Option<&RunRecord>,
    split_seed: Option<u64>,
) -> Result<LabeledDataset> {
    if dataset.tags.is_some() {
        return Ok(dataset);
    }
    let ratios = record.map(|r| r.train.split).unwrap_or_default();
    let seed = split_seed.or_else(|| record.and_then(|r| r.dataset.split_seed));
    match seed {
        Some(seed) => Ok(split(&dataset, ratios, seed)?),
        None => Ok(dataset),
    }
}

pub fn check_model_matches(checkpoint: &Checkpoint, dataset: &LabeledDataset) -> Result<()> {
    if checkpoint.config.num_classes != dataset.num_classes() {
        anyhow::bail!(rashvit_core::Error::Config(format!(
            "checkpoint has {} classes, dataset has {}",
            checkpoint.config.num_classes,
            dataset.num_classes()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let text = r#"{"dataset": {"synth_standard": {"classes": 3, "segments_per_class": 4}}, "out_dir": "x", "bogus": 1}"#;
        let err = serde_json::from_str::<RunConfigFile>(text).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
        let text = r#"{"dataset": {"synth_standard": {"classes": 3, "segments_per_class": 4}}, "out_dir": "x", "train": {"learning_rate": 1}}"#;
        let err = serde_json::from_str::<RunConfigFile>(text).unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let text = r#"{"model": {"num_classes": 3}, "dataset": {"archive": {"path": "data"}}, "out_dir": "runs/a"}"#;
        let c: RunConfigFile = serde_json::from_str(text).unwrap();
        assert_eq!(c.model.num_classes, 3);
        assert_eq!(c.model.embed_dims, ModelConfig::default().embed_dims);
        assert_eq!(c.train, TrainConfig::default());
    }
}
