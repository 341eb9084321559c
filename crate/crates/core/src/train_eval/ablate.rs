use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, TrainNoise};
use super::data::{run_eval, Prepared};
use super::eval::split_indices;
use super::metrics::metrics_from_logits;
use super::sweep::{format_snr, summarize, SweepCell, SweepPoint};
use super::train::train;
use crate::datasets::{split, LabeledDataset, Split};
use crate::model::{count_params, ModelConfig};
use crate::rng::derive_seed;
use crate::sigproc::FeatureMode;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FfnKind {
    Res,
    Plain,
}

/// One ablation arm: exactly one axis set, differing from the base.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ahab: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ffn: Option<FfnKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureMode>,
}

impl Variant {
    pub fn ahab(on: bool) -> Self {
        Self {
            ahab: Some(on),
            ..Self::default()
        }
    }

    pub fn ffn(kind: FfnKind) -> Self {
        Self {
            ffn: Some(kind),
            ..Self::default()
        }
    }

    pub fn features(mode: FeatureMode) -> Self {
        Self {
            features: Some(mode),
            ..Self::default()
        }
    }

    pub fn name(&self) -> String {
        let mut parts = Vec::new();
        if let Some(a) = self.ahab {
            parts.push(format!("ahab={}", if a { "on" } else { "off" }));
        }
        if let Some(f) = self.ffn {
            parts.push(format!("ffn={}", if f == FfnKind::Res { "res" } else { "plain" }));
        }
        if let Some(f) = self.features {
            parts.push(format!("features={}", if f == FeatureMode::Fft { "fft" } else { "raw" }));
        }
        parts.join(",")
    }

    /// Number of axes on which this variant actually changes `base`.
    pub fn changed_axes(&self, model: &ModelConfig, train: &TrainConfig) -> usize {
        let base_ffn = if model.use_res_ffn { FfnKind::Res } else { FfnKind::Plain };
        [
            self.ahab.is_some_and(|a| a != model.use_ahab),
            self.ffn.is_some_and(|f| f != base_ffn),
            self.features.is_some_and(|f| f != train.feature_mode),
        ]
        .iter()
        .filter(|&&c| c)
        .count()
    }

    pub fn apply(&self, model: &ModelConfig, train: &TrainConfig) -> Result<(ModelConfig, TrainConfig)> {
        let set = [self.ahab.is_some(), self.ffn.is_some(), self.features.is_some()]
            .iter()
            .filter(|&&s| s)
            .count();
        let changed = self.changed_axes(model, train);
        if set != 1 || changed != 1 {
            return Err(Error::InvalidArgument(format!(
                "variant `{}` must alter exactly one axis of the base, it alters {changed}",
                self.name()
            )));
        }
        let mut m = model.clone();
        let mut t = train.clone();
        if let Some(a) = self.ahab {
            m.use_ahab = a;
        }
        if let Some(f) = self.ffn {
            m.use_res_ffn = f == FfnKind::Res;
        }
        if let Some(f) = self.features {
            t.feature_mode = f;
        }
        Ok((m, t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Train a separate model at each test SNR.
    #[default]
    PerSnr,
    /// Train once with the base train noise, test at every SNR.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub param_count: usize,
    pub points: Vec<SweepPoint>,
    pub cells: Vec<SweepCell>,
    /// Mean accuracy minus the base row's, per SNR.
    pub delta_vs_base: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub protocol: Protocol,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,snr_db,mean_accuracy,std_accuracy,delta_vs_base\n");
        for r in &self.rows {
            for (p, d) in r.points.iter().zip(&r.delta_vs_base) {
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.name,
                    format_snr(p.snr_db),
                    p.mean_accuracy,
                    p.std_accuracy,
                    d
                ));
            }
        }
        s
    }

    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// Accuracy of one trained cell at each requested SNR.
fn run_cell(
    dataset: &LabeledDataset,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    snrs: &[f64],
) -> Result<Vec<f64>> {
    let cfg = TrainConfig {
        seed,
        ..train_cfg.clone()
    };
    let outcome = train(dataset, model, &cfg)?;
    let test_idx = split_indices(dataset, Some(Split::Test))?;
    let data = Prepared::new(dataset, &test_idx, cfg.feature_mode);
    snrs.iter()
        .map(|&snr| {
            let out = run_eval(model, &outcome.params, &data, Some(snr), derive_seed(seed, 0xAB1A7E))?;
            Ok(metrics_from_logits(&out.logits, &data.labels, model.num_classes)?.accuracy)
        })
        .collect()
}

/// Trains the base and each variant with every seed, on identical splits,
/// and tabulates test accuracy per SNR. Cells run in parallel on the
/// current rayon pool.
pub fn ablate(
    dataset: &LabeledDataset,
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    variants: &[Variant],
    snrs: &[f64],
    seeds: &[u64],
    protocol: Protocol,
) -> Result<AblationTable> {
    if snrs.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one SNR and one seed".into()));
    }
    let mut arms = vec![("base".to_string(), base_model.clone(), base_train.clone())];
    for v in variants {
        let (m, t) = v.apply(base_model, base_train)?;
        arms.push((v.name(), m, t));
    }
    let dataset = match dataset.tags {
        Some(_) => dataset.clone(),
        None => split(dataset, base_train.split, base_train.seed)?,
    };

    // (arm, seed, snr index or None for the shared protocol)
    let mut jobs: Vec<(usize, u64, Option<usize>)> = Vec::new();
    for a in 0..arms.len() {
        for &seed in seeds {
            match protocol {
                Protocol::PerSnr => jobs.extend((0..snrs.len()).map(|s| (a, seed, Some(s)))),
                Protocol::Shared => jobs.push((a, seed, None)),
            }
        }
    }
    let results: Vec<Vec<SweepCell>> = jobs
        .par_iter()
        .map(|&(a, seed, s)| {
            let (_, model, train_cfg) = &arms[a];
            match s {
                Some(s) => {
                    let snr = snrs[s];
                    let cfg = TrainConfig {
                        train_noise: if snr.is_finite() {
                            TrainNoise::Fixed { snr_db: snr }
                        } else {
                            TrainNoise::None
                        },
                        eval_snr_db: snr.is_finite().then_some(snr),
                        ..train_cfg.clone()
                    };
                    let acc = run_cell(&dataset, model, &cfg, seed, &[snr])?;
                    Ok(vec![SweepCell {
                        snr_db: snr,
                        seed,
                        accuracy: acc[0],
                    }])
                }
                None => {
                    let accs = run_cell(&dataset, model, train_cfg, seed, snrs)?;
                    Ok(snrs
                        .iter()
                        .zip(accs)
                        .map(|(&snr, accuracy)| SweepCell {
                            snr_db: snr,
                            seed,
                            accuracy,
                        })
                        .collect())
                }
            }
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<AblationRow> = arms
        .iter()
        .enumerate()
        .map(|(a, (name, model, _))| {
            let cells: Vec<SweepCell> = jobs
                .iter()
                .zip(&results)
                .filter(|((ja, _, _), _)| *ja == a)
                .flat_map(|(_, r)| r.iter().cloned())
                .collect();
            AblationRow {
                name: name.clone(),
                param_count: count_params(model),
                points: summarize(snrs, &cells),
                cells,
                delta_vs_base: Vec::new(),
            }
        })
        .collect();
    let base: Vec<f64> = rows[0].points.iter().map(|p| p.mean_accuracy).collect();
    for r in &mut rows {
        r.delta_vs_base = r.points.iter().zip(&base).map(|(p, b)| p.mean_accuracy - b).collect();
    }
    Ok(AblationTable { protocol, rows })
}
