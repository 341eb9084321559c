use serde::{Deserialize, Serialize};

use crate::datasets::SplitRatios;
use crate::diffcore::AdamWConfig;
use crate::sigproc::FeatureMode;
use crate::{Error, Result};

/// Noise added to training signals.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TrainNoise {
    #[default]
    None,
    /// Every training segment at this SNR, fresh noise each epoch.
    Fixed { snr_db: f64 },
    /// SNR drawn uniformly from `[lo_db, hi_db]` per segment and epoch.
    Uniform { lo_db: f64, hi_db: f64 },
}

impl TrainNoise {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TrainNoise::None => Ok(()),
            TrainNoise::Fixed { snr_db } if snr_db.is_finite() => Ok(()),
            TrainNoise::Uniform { lo_db, hi_db } if lo_db.is_finite() && hi_db.is_finite() && lo_db <= hi_db => Ok(()),
            other => Err(Error::Config(format!("invalid train noise {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub train_noise: TrainNoise,
    /// SNR for validation and test evaluation; `None` is clean.
    pub eval_snr_db: Option<f64>,
    pub feature_mode: FeatureMode,
    /// Applied when the dataset has no split tags yet.
    pub split: SplitRatios,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// CPU-friendly defaults for synthetic data and the tiny model.
    pub fn desk() -> Self {
        let adam = AdamWConfig::default();
        Self {
            lr: 1e-3,
            batch_size: 16,
            epochs: 150,
            seed: 0,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            weight_decay: adam.weight_decay,
            train_noise: TrainNoise::None,
            eval_snr_db: None,
            feature_mode: FeatureMode::Fft,
            split: SplitRatios::default(),
        }
    }

    /// Full-length schedule: 750 epochs, batch 16, lr 0.001, AdamW.
    pub fn full() -> Self {
        Self {
            epochs: 750,
            ..Self::desk()
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size {} must be >= 2 for batch normalization",
                self.batch_size
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be finite and >= 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("beta1, beta2 in [0,1) and adam_eps > 0 required".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if let Some(s) = self.eval_snr_db {
            if !s.is_finite() {
                return Err(Error::Config("eval_snr_db must be finite (omit it for clean)".into()));
            }
        }
        self.train_noise.validate()?;
        self.split.validate()
    }
}
