use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LabeledDataset, Provenance};
use crate::io::write_atomic;
use crate::sigproc::{sliding_window, WINDOW};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

fn default_window() -> usize {
    WINDOW
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Path of a headerless little-endian `f32` file, relative to the manifest.
    pub path: String,
    /// Byte offset of the first sample.
    #[serde(default)]
    pub offset: u64,
    /// Number of samples to read from `offset`.
    pub samples: usize,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub sample_rate_hz: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_window")]
    pub stride: usize,
    /// Class names indexed by label.
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Labels must be dense in `[0, K)` with `K = classes.len()`.
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::Format(format!("sample_rate_hz {} must be positive", self.sample_rate_hz)));
        }
        if self.window == 0 || self.stride == 0 {
            return Err(Error::Format("window and stride must be positive".into()));
        }
        if self.entries.is_empty() {
            return Err(Error::EmptyInput("manifest has no entries".into()));
        }
        let k = self.classes.len();
        let mut seen = vec![false; k];
        for e in &self.entries {
            if e.label >= k {
                return Err(Error::LabelOutOfRange {
                    label: e.label,
                    classes: k,
                });
            }
            seen[e.label] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::LabelGap(missing));
        }
        Ok(())
    }
}

/// Reads every manifest entry and cuts it into windows.
pub fn load_archive(manifest_path: &Path) -> Result<LabeledDataset> {
    if !manifest_path.is_file() {
        return Err(Error::MissingFile(manifest_path.to_path_buf()));
    }
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(manifest_path)?)?;
    manifest.validate()?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut files: BTreeMap<PathBuf, Vec<u8>> = BTreeMap::new();
    let mut segments = Vec::new();
    let mut labels = Vec::new();
    for e in &manifest.entries {
        let path = root.join(&e.path);
        if !files.contains_key(&path) {
            if !path.is_file() {
                return Err(Error::MissingFile(path));
            }
            files.insert(path.clone(), std::fs::read(&path)?);
        }
        let bytes = &files[&path];
        let needed = e.samples as u64 * 4;
        let available = (bytes.len() as u64).saturating_sub(e.offset);
        if available < needed {
            return Err(Error::ShortFile {
                path,
                offset: e.offset,
                needed,
                available,
            });
        }
        let start = e.offset as usize;
        let samples: Vec<f64> = bytes[start..start + 4 * e.samples]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let id = format!("{}+{}", e.path, e.offset);
        let segs = sliding_window(&samples, manifest.window, manifest.stride, manifest.sample_rate_hz, &id)?;
        labels.extend(std::iter::repeat_n(e.label, segs.len()));
        segments.extend(segs);
    }
    Ok(LabeledDataset {
        sample_rate_hz: manifest.sample_rate_hz,
        classes: manifest.classes,
        segments,
        labels,
        tags: None,
        provenance: Provenance::Manifest {
            path: manifest_path.display().to_string(),
        },
        split_seed: None,
    })
}

/// Writes one `class_<k>.f32` file per class and a manifest whose entries
/// list the segments in dataset order, so [`load_archive`] returns them in
/// the same order. Samples are stored as `f32`.
pub fn save_archive(dataset: &LabeledDataset, dir: &Path) -> Result<PathBuf> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("cannot archive an empty dataset".into()));
    }
    let window = dataset.segments[0].len();
    if let Some(s) = dataset.segments.iter().find(|s| s.len() != window) {
        return Err(Error::InvalidArgument(format!(
            "segment {} has {} samples, expected {window}",
            s.source_id,
            s.len()
        )));
    }
    std::fs::create_dir_all(dir)?;
    let mut blobs: Vec<Vec<u8>> = vec![Vec::new(); dataset.num_classes()];
    let mut entries = Vec::with_capacity(dataset.len());
    for (seg, &label) in dataset.segments.iter().zip(&dataset.labels) {
        let blob = blobs.get_mut(label).ok_or(Error::LabelOutOfRange {
            label,
            classes: dataset.num_classes(),
        })?;
        entries.push(ManifestEntry {
            path: format!("class_{label}.f32"),
            offset: blob.len() as u64,
            samples: window,
            label,
        });
        for &v in &seg.samples {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for (k, blob) in blobs.iter().enumerate() {
        write_atomic(&dir.join(format!("class_{k}.f32")), blob)?;
    }
    let manifest = Manifest {
        sample_rate_hz: dataset.sample_rate_hz,
        window,
        stride: window,
        classes: dataset.classes.clone(),
        entries,
    };
    manifest.validate()?;
    let path = dir.join(MANIFEST_FILE);
    write_atomic(&path, &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_f32(path: &Path, values: &[f32]) {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(path, bytes).unwrap();
    }

    fn manifest(entries: Vec<ManifestEntry>, classes: usize) -> Manifest {
        Manifest {
            sample_rate_hz: 12_000.0,
            window: 2048,
            stride: 2048,
            classes: (0..classes).map(|k| format!("c{k}")).collect(),
            entries,
        }
    }

    fn entry(path: &str, samples: usize, label: usize) -> ManifestEntry {
        ManifestEntry {
            path: path.into(),
            offset: 0,
            samples,
            label,
        }
    }

    #[test]
    fn one_file_two_windows() {
        let dir = tempfile::tempdir().unwrap();
        let values: Vec<f32> = (0..4096).map(|i| (i as f32 * 0.01).sin()).collect();
        write_f32(&dir.path().join("a.f32"), &values);
        let m = manifest(vec![entry("a.f32", 4096, 0)], 1);
        let mp = dir.path().join(MANIFEST_FILE);
        std::fs::write(&mp, serde_json::to_vec(&m).unwrap()).unwrap();
        let ds = load_archive(&mp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels, vec![0, 0]);
        assert_eq!(ds.segments[1].samples[0], values[2048] as f64);
    }

    #[test]
    fn label_gap_names_the_missing_index() {
        let m = manifest(vec![entry("a", 2048, 0), entry("b", 2048, 2)], 3);
        assert!(matches!(m.validate(), Err(Error::LabelGap(1))));
    }

    #[test]
    fn missing_and_short_files_are_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mp = dir.path().join(MANIFEST_FILE);
        let m = manifest(vec![entry("gone.f32", 2048, 0)], 1);
        std::fs::write(&mp, serde_json::to_vec(&m).unwrap()).unwrap();
        assert!(matches!(load_archive(&mp), Err(Error::MissingFile(_))));

        write_f32(&dir.path().join("gone.f32"), &[0.0; 100]);
        match load_archive(&mp) {
            Err(Error::ShortFile { needed, available, .. }) => {
                assert_eq!((needed, available), (8192, 400));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            load_archive(&dir.path().join("nope.json")),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn unknown_manifest_keys_are_rejected() {
        let err = serde_json::from_str::<Manifest>(
            r#"{"sample_rate_hz": 1.0, "classes": [], "entries": [], "rate": 3}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("rate"));
    }
}
