//! Static walk over the network: parameter specs, buffers and per-layer
//! MAC counts all come from here, so the forward pass, the initializer and
//! the accounting agree on names and shapes.

use serde::Serialize;

use super::config::{AhabPlacement, ModelConfig, NormKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Normal with sd `sqrt(2 / fan_out)`.
    ConvFanOut { fan_out: usize },
    /// Normal with sd 0.02, resampled outside two standard deviations.
    TruncNormal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    /// Running statistics: saved in checkpoints, never optimized.
    pub buffer: bool,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerInfo {
    pub name: String,
    pub kind: &'static str,
    /// (C, H, W) of the layer output, or (features, 1, 1) for vectors.
    pub out_shape: [usize; 3],
    pub params: usize,
    pub macs: u64,
}

pub fn conv_params(c_in: usize, c_out: usize, kernel: usize, groups: usize, bias: bool) -> usize {
    c_out * (c_in / groups) * kernel * kernel + if bias { c_out } else { 0 }
}

pub fn conv_macs(c_in: usize, c_out: usize, kernel: usize, groups: usize, out_h: usize, out_w: usize) -> u64 {
    (kernel * kernel * (c_in / groups) * c_out * out_h * out_w) as u64
}

pub fn linear_params(d_in: usize, d_out: usize, bias: bool) -> usize {
    d_in * d_out + if bias { d_out } else { 0 }
}

pub fn linear_macs(d_in: usize, d_out: usize, rows: usize) -> u64 {
    (d_in * d_out * rows) as u64
}

/// `floor((len + 2*pad - k)/stride) + 1`
pub fn conv_out(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - kernel) / stride + 1
}

#[derive(Debug, Default)]
pub struct Architecture {
    pub params: Vec<ParamSpec>,
    pub layers: Vec<LayerInfo>,
    /// (label, C, H, W) after the stem, each stage and each downsample.
    pub trace: Vec<(String, [usize; 3])>,
    pub feature_width: usize,
}

impl Architecture {
    pub fn of(config: &ModelConfig) -> Self {
        let mut a = Walker {
            cfg: config,
            arch: Architecture::default(),
        };
        a.network();
        a.arch
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().filter(|p| !p.buffer).map(ParamSpec::numel).sum()
    }

    pub fn macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs).sum()
    }
}

pub fn count_params(config: &ModelConfig) -> usize {
    Architecture::of(config).param_count()
}

/// Multiply-accumulates per sample over convolutions, linear maps and the
/// attention products `QK^T` and `AV`.
pub fn estimate_flops(config: &ModelConfig) -> u64 {
    Architecture::of(config).macs()
}

struct Walker<'a> {
    cfg: &'a ModelConfig,
    arch: Architecture,
}

impl Walker<'_> {
    fn param(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        let n = shape.iter().product();
        self.arch.params.push(ParamSpec {
            name,
            shape,
            init,
            buffer: false,
        });
        n
    }

    fn buffer(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.arch.params.push(ParamSpec {
            name,
            shape,
            init,
            buffer: true,
        });
    }

    fn layer(&mut self, name: &str, kind: &'static str, out: [usize; 3], params: usize, macs: u64) {
        self.arch.layers.push(LayerInfo {
            name: name.to_string(),
            kind,
            out_shape: out,
            params,
            macs,
        });
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        bias: bool,
        hw: (usize, usize),
        init: Init,
    ) -> (usize, usize) {
        let pad = kernel / 2;
        let (oh, ow) = (conv_out(hw.0, kernel, stride, pad), conv_out(hw.1, kernel, stride, pad));
        let mut n = self.param(
            format!("{name}.weight"),
            vec![c_out, c_in / groups, kernel, kernel],
            init,
        );
        if bias {
            n += self.param(format!("{name}.bias"), vec![c_out], Init::Zeros);
        }
        let kind = if groups > 1 && groups == c_in { "dwconv" } else { "conv" };
        self.layer(name, kind, [c_out, oh, ow], n, conv_macs(c_in, c_out, kernel, groups, oh, ow));
        (oh, ow)
    }

    fn fan_out(c_out: usize, kernel: usize, groups: usize) -> Init {
        Init::ConvFanOut {
            fan_out: c_out * kernel * kernel / groups,
        }
    }

    fn norm(&mut self, name: &str, c: usize, hw: (usize, usize)) {
        if self.cfg.norm == NormKind::Identity {
            return;
        }
        let mut n = self.param(format!("{name}.gamma"), vec![c], Init::Ones);
        n += self.param(format!("{name}.beta"), vec![c], Init::Zeros);
        self.buffer(format!("{name}.running_mean"), vec![c], Init::Zeros);
        self.buffer(format!("{name}.running_var"), vec![c], Init::Ones);
        self.layer(name, "batch_norm", [c, hw.0, hw.1], n, 0);
    }

    fn network(&mut self) {
        let cfg = self.cfg;
        let chans = cfg.stem_channels();
        let mut hw = (cfg.input_hw[0], cfg.input_hw[1]);
        let mut c_in = cfg.in_channels;
        for (i, (&c, &s)) in chans.iter().zip(&cfg.stem_strides).enumerate() {
            hw = self.conv(
                &format!("stem.conv{i}"),
                c_in,
                c,
                3,
                s,
                1,
                false,
                hw,
                Self::fan_out(c, 3, 1),
            );
            self.norm(&format!("stem.norm{i}"), c, hw);
            c_in = c;
        }
        let [c1, _, c3] = cfg.embed_dims;
        self.arch.trace.push(("stem".into(), [c1, hw.0, hw.1]));

        for stage in 1..=3 {
            let c = cfg.embed_dims[stage - 1];
            if stage > 1 {
                let prev = cfg.embed_dims[stage - 2];
                hw = self.downsample(&format!("down{}", stage - 1), prev, c, hw);
                self.arch.trace.push((format!("down{}", stage - 1), [c, hw.0, hw.1]));
            }
            for j in 0..cfg.depths[stage - 1] {
                self.block(&format!("stage{stage}.block{j}"), stage, c, hw);
            }
            if cfg.use_ahab && cfg.ahab_placement == AhabPlacement::PerStage {
                self.ahab(&format!("stage{stage}.ahab"), c, hw);
            }
            self.arch.trace.push((format!("stage{stage}"), [c, hw.0, hw.1]));
        }

        if cfg.long_skip {
            let stem_hw = (self.arch.trace[0].1[1], self.arch.trace[0].1[2]);
            self.conv("long_skip", c1, c3, 1, 1, 1, true, stem_hw, Self::fan_out(c3, 1, 1));
        }
        self.arch.feature_width = c3;
        let mut d_in = c3;
        let widths: Vec<usize> = cfg
            .head_hidden
            .iter()
            .copied()
            .chain(std::iter::once(cfg.num_classes))
            .collect();
        for (i, &d_out) in widths.iter().enumerate() {
            let name = format!("head.fc{i}");
            let mut n = self.param(format!("{name}.weight"), vec![d_in, d_out], Init::TruncNormal);
            n += self.param(format!("{name}.bias"), vec![d_out], Init::Zeros);
            self.layer(&name, "linear", [d_out, 1, 1], n, linear_macs(d_in, d_out, 1));
            d_in = d_out;
        }
    }

    fn block(&mut self, prefix: &str, stage: usize, c: usize, hw: (usize, usize)) {
        let cfg = self.cfg;
        self.conv(&format!("{prefix}.dw"), c, c, 3, 1, c, false, hw, Self::fan_out(c, 3, c));
        self.norm(&format!("{prefix}.dw_norm"), c, hw);
        if stage >= 2 {
            self.shsa(&format!("{prefix}.shsa"), c, hw);
        }
        let e = c * cfg.ffn_expansion;
        self.conv(&format!("{prefix}.ffn.fc1"), c, e, 1, 1, 1, false, hw, Self::fan_out(e, 1, 1));
        self.norm(&format!("{prefix}.ffn.norm"), e, hw);
        self.conv(&format!("{prefix}.ffn.fc2"), e, c, 1, 1, 1, true, hw, Self::fan_out(c, 1, 1));
        if cfg.use_ahab && cfg.ahab_placement == AhabPlacement::PerBlock {
            self.ahab(&format!("{prefix}.ahab"), c, hw);
        }
    }

    fn shsa(&mut self, prefix: &str, c: usize, hw: (usize, usize)) {
        let cp = self.cfg.partial_channels(c);
        let dqk = self.cfg.qk_dim;
        let n_tok = hw.0 * hw.1;
        for (name, width) in [("wq", dqk), ("wk", dqk), ("wv", cp)] {
            let p = self.param(format!("{prefix}.{name}"), vec![cp, width], Init::TruncNormal);
            self.layer(
                &format!("{prefix}.{name}"),
                "linear",
                [width, hw.0, hw.1],
                p,
                linear_macs(cp, width, n_tok),
            );
        }
        let attn_macs = (n_tok * n_tok * dqk + n_tok * n_tok * cp) as u64;
        self.layer(&format!("{prefix}.attention"), "attention", [cp, hw.0, hw.1], 0, attn_macs);
        self.conv(&format!("{prefix}.proj"), c, c, 1, 1, 1, true, hw, Init::TruncNormal);
    }

    fn ahab(&mut self, prefix: &str, c: usize, hw: (usize, usize)) {
        let cr = self.cfg.reduced_channels(c);
        // The shared MLP runs on both the average- and max-pooled vectors.
        let mut n = self.param(format!("{prefix}.ca_fc1.weight"), vec![cr, c, 1, 1], Init::TruncNormal);
        self.layer(&format!("{prefix}.ca_fc1"), "conv", [cr, 1, 1], n, 2 * conv_macs(c, cr, 1, 1, 1, 1));
        n = self.param(format!("{prefix}.ca_fc2.weight"), vec![c, cr, 1, 1], Init::TruncNormal);
        self.layer(&format!("{prefix}.ca_fc2"), "conv", [c, 1, 1], n, 2 * conv_macs(cr, c, 1, 1, 1, 1));
        let k = self.cfg.spatial_kernel;
        self.conv(&format!("{prefix}.sa_conv"), 2, 1, k, 1, 1, false, hw, Self::fan_out(1, k, 1));
        let mut s = self.param(format!("{prefix}.alpha"), vec![1], Init::Ones);
        s += self.param(format!("{prefix}.beta"), vec![1], Init::Ones);
        self.layer(&format!("{prefix}.scales"), "scalar", [2, 1, 1], s, 0);
    }

    fn downsample(&mut self, prefix: &str, c_in: usize, c_out: usize, hw: (usize, usize)) -> (usize, usize) {
        self.block(&format!("{prefix}.pre"), 1, c_in, hw);
        let e = 2 * c_in;
        let ir = format!("{prefix}.ir");
        self.conv(&format!("{ir}.expand"), c_in, e, 1, 1, 1, false, hw, Self::fan_out(e, 1, 1));
        self.norm(&format!("{ir}.expand_norm"), e, hw);
        let hw2 = self.conv(&format!("{ir}.dw"), e, e, 3, 2, e, false, hw, Self::fan_out(e, 3, e));
        self.norm(&format!("{ir}.dw_norm"), e, hw2);
        self.conv(&format!("{ir}.project"), e, c_out, 1, 1, 1, false, hw2, Self::fan_out(c_out, 1, 1));
        self.norm(&format!("{ir}.project_norm"), c_out, hw2);
        self.block(&format!("{prefix}.post"), 1, c_out, hw2);
        hw2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_layer_closed_forms() {
        assert_eq!(conv_macs(2, 16, 3, 1, 32, 16), 147_456);
        assert_eq!(conv_params(64, 64, 1, 1, true), 64 * 64 + 64);
        assert_eq!(conv_params(128, 128, 3, 128, false), 1152);
        assert_eq!(conv_macs(128, 128, 3, 128, 4, 2), 9216);
        assert_eq!(linear_params(320, 10, true), 3210);
    }

    #[test]
    fn default_shape_trace() {
        let a = Architecture::of(&ModelConfig::default());
        let trace: Vec<[usize; 3]> = a.trace.iter().map(|t| t.1).collect();
        assert_eq!(
            trace,
            vec![
                [128, 4, 2],
                [128, 4, 2],
                [224, 2, 1],
                [224, 2, 1],
                [320, 1, 1],
                [320, 1, 1]
            ]
        );
        assert_eq!(a.feature_width, 320);
    }

    #[test]
    fn stage_one_has_no_attention_params() {
        let a = Architecture::of(&ModelConfig::default());
        assert!(!a.params.iter().any(|p| p.name.starts_with("stage1.") && p.name.contains(".shsa.")));
        assert!(!a.params.iter().any(|p| p.name.starts_with("down") && p.name.contains(".shsa.")));
        assert!(a.params.iter().any(|p| p.name == "stage2.block0.shsa.wq"));
    }

    #[test]
    fn unique_names() {
        let a = Architecture::of(&ModelConfig::default());
        let mut names: Vec<&str> = a.params.iter().map(|p| p.name.as_str()).collect();
        let n = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), n);
    }
}
