//! Labeled vibration datasets: the neutral `.f32` + `manifest.json` archive,
//! stratified splits, and a synthetic bearing-signal generator.

mod archive;
pub mod presets;
mod split;
mod synth;

use serde::{Deserialize, Serialize};

use crate::sigproc::SignalSegment;

pub use archive::{load_archive, save_archive, Manifest, ManifestEntry, MANIFEST_FILE};
pub use split::{class_histogram, split, ClassHistogram, SplitRatios};
pub use synth::{synth_generate, SynthClass, SynthSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Manifest { path: String },
    Synth { spec: SynthSpec },
    Memory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub sample_rate_hz: f64,
    /// Class names indexed by label.
    pub classes: Vec<String>,
    pub segments: Vec<SignalSegment>,
    pub labels: Vec<usize>,
    /// One tag per segment once [`split`] has run.
    pub tags: Option<Vec<Split>>,
    pub provenance: Provenance,
    /// Seed of the last [`split`], if any.
    pub split_seed: Option<u64>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Indices tagged `split`, in dataset order. Empty when untagged.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        match &self.tags {
            Some(tags) => (0..tags.len()).filter(|&i| tags[i] == split).collect(),
            None => Vec::new(),
        }
    }

    /// Keeps only the listed segments (tags follow along).
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            segments: indices.iter().map(|&i| self.segments[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            tags: self.tags.as_ref().map(|t| indices.iter().map(|&i| t[i]).collect()),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            sample_rate_hz: self.sample_rate_hz,
            classes: self.classes.clone(),
            segments: Vec::new(),
            labels: Vec::new(),
            tags: None,
            provenance: self.provenance.clone(),
            split_seed: self.split_seed,
        }
    }
}
