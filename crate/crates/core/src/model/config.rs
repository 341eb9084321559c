use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Where the hybrid attention block is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AhabPlacement {
    #[default]
    PerBlock,
    PerStage,
}

/// Normalization after conv sublayers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    Batch,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dims: [usize; 3],
    pub depths: [usize; 3],
    pub partial_ratio: f64,
    pub qk_dim: usize,
    pub ffn_expansion: usize,
    pub num_classes: usize,
    pub dropout_p: f64,
    pub use_ahab: bool,
    pub use_res_ffn: bool,
    pub in_channels: usize,
    pub input_hw: [usize; 2],
    pub stem_strides: [usize; 4],
    /// Defaults to `[C1/8, C1/4, C1/2, C1]`.
    pub stem_channels: Option<[usize; 4]>,
    pub channel_reduction: usize,
    pub spatial_kernel: usize,
    pub ahab_placement: AhabPlacement,
    pub norm: NormKind,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub minmax_eps: f64,
    pub long_skip: bool,
    /// Hidden widths of the classifier MLP; empty means a single linear layer.
    pub head_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dims: [128, 224, 320],
            depths: [1, 2, 3],
            partial_ratio: 1.0 / 4.67,
            qk_dim: 16,
            ffn_expansion: 2,
            num_classes: 10,
            dropout_p: 0.1,
            use_ahab: true,
            use_res_ffn: true,
            in_channels: 2,
            input_hw: [64, 32],
            stem_strides: [2, 2, 2, 2],
            stem_channels: None,
            channel_reduction: 8,
            spatial_kernel: 7,
            ahab_placement: AhabPlacement::PerBlock,
            norm: NormKind::Batch,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            minmax_eps: 1e-6,
            long_skip: true,
            head_hidden: Vec::new(),
        }
    }
}

impl ModelConfig {
    /// Ten CWRU drive-end classes at full width.
    pub fn cwru() -> Self {
        Self::default()
    }

    /// Fourteen-code PU label map at full width.
    pub fn pu() -> Self {
        Self {
            num_classes: 14,
            ..Self::default()
        }
    }

    /// Desk-scale model used for synthetic-data experiments.
    pub fn tiny(num_classes: usize) -> Self {
        Self {
            embed_dims: [32, 48, 64],
            depths: [1, 1, 1],
            num_classes,
            ..Self::default()
        }
    }

    /// Smallest config exercised by the full-model gradient check (8x8 input).
    pub fn gradcheck_tiny() -> Self {
        Self {
            embed_dims: [8, 12, 16],
            depths: [1, 1, 1],
            num_classes: 3,
            input_hw: [8, 8],
            stem_strides: [2, 2, 1, 1],
            qk_dim: 4,
            dropout_p: 0.0,
            ..Self::default()
        }
    }

    pub fn partial_channels(&self, channels: usize) -> usize {
        (self.partial_ratio * channels as f64).floor() as usize
    }

    pub fn reduced_channels(&self, channels: usize) -> usize {
        (channels / self.channel_reduction.max(1)).max(1)
    }

    pub fn stem_channels(&self) -> [usize; 4] {
        self.stem_channels.unwrap_or_else(|| {
            let c = self.embed_dims[0];
            [(c / 8).max(1), (c / 4).max(1), (c / 2).max(1), c]
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.embed_dims.contains(&0) {
            return bad(format!("embed_dims {:?} must be positive", self.embed_dims));
        }
        if self.depths.contains(&0) {
            return bad(format!("depths {:?} must be positive", self.depths));
        }
        if !(self.partial_ratio > 0.0 && self.partial_ratio < 1.0) {
            return bad(format!("partial_ratio {} must lie in (0, 1)", self.partial_ratio));
        }
        for (stage, &c) in self.embed_dims.iter().enumerate().skip(1) {
            if self.partial_channels(c) < 1 {
                return bad(format!(
                    "stage {} has {c} channels: floor(r*C) = 0 attention channels",
                    stage + 1
                ));
            }
        }
        if self.qk_dim == 0 || self.ffn_expansion == 0 || self.channel_reduction == 0 {
            return bad("qk_dim, ffn_expansion and channel_reduction must be >= 1".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes {} must be >= 2", self.num_classes));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} must lie in [0, 1)", self.dropout_p));
        }
        if self.in_channels == 0 || self.input_hw.contains(&0) {
            return bad("in_channels and input_hw must be positive".into());
        }
        if self.stem_strides.contains(&0) {
            return bad("stem strides must be >= 1".into());
        }
        if self.stem_channels().contains(&0) || self.stem_channels()[3] != self.embed_dims[0] {
            return bad("stem channels must be positive and end at embed_dims[0]".into());
        }
        if self.spatial_kernel % 2 == 0 {
            return bad(format!("spatial_kernel {} must be odd", self.spatial_kernel));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 || self.minmax_eps < 0.0 {
            return bad("bn_momentum in [0,1], bn_eps > 0, minmax_eps >= 0 required".into());
        }
        if self.head_hidden.contains(&0) {
            return bad("head_hidden widths must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_channels_floor() {
        let c = ModelConfig::default();
        assert_eq!(c.partial_channels(128), 27);
        assert_eq!(c.partial_channels(224), 47);
        assert_eq!(c.partial_channels(320), 68);
    }

    #[test]
    fn presets_validate() {
        for c in [
            ModelConfig::cwru(),
            ModelConfig::pu(),
            ModelConfig::tiny(10),
            ModelConfig::gradcheck_tiny(),
        ] {
            c.validate().unwrap();
        }
        assert_eq!(ModelConfig::cwru().stem_channels(), [16, 32, 64, 128]);
    }

    #[test]
    fn rejects_zero_attention_channels() {
        let c = ModelConfig {
            embed_dims: [8, 4, 16],
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<ModelConfig>(r#"{"embed_dim": [1,2,3]}"#).unwrap_err();
        assert!(err.to_string().contains("embed_dim"));
    }
}
