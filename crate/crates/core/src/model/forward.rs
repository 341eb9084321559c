//! Forward pass on a [`Tape`]. Every function takes the [`Session`] that binds
//! parameter names to tape variables, and a name prefix that must match the
//! walk in [`super::arch`].

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::config::{AhabPlacement, ModelConfig, NormKind};
use super::params::ModelParams;
use crate::diffcore::{BnMode, Conv2dGeom, Real, Tape, Tensor, Var};
use crate::rng::{rng_from_seed, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Batch-norm statistics observed during a train-mode pass: (layer, mean, biased var).
pub type BnBatchStats<T> = Vec<(String, Vec<T>, Vec<T>)>;

pub struct Session<'t, 'p, T: Real> {
    pub tape: &'t Tape<T>,
    pub config: &'p ModelConfig,
    params: &'p ModelParams<T>,
    vars: BTreeMap<String, Var<'t, T>>,
    mode: Mode,
    rng: RefCell<Rng>,
    bn_stats: RefCell<BnBatchStats<T>>,
    used: RefCell<BTreeSet<String>>,
}

impl<'t, 'p, T: Real> Session<'t, 'p, T> {
    /// Binds every parameter as a tape leaf. With `track = false` the leaves
    /// are constants (inference only).
    pub fn new(
        tape: &'t Tape<T>,
        config: &'p ModelConfig,
        params: &'p ModelParams<T>,
        mode: Mode,
        dropout_seed: u64,
        track: bool,
    ) -> Result<Self> {
        let vars = params
            .params
            .iter()
            .map(|(k, v)| {
                let var = if track {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Ok(Self::from_vars(tape, config, params, vars, mode, dropout_seed))
    }

    /// Binds caller-made variables by name; `params` then only supplies
    /// batch-norm buffers. Used by gradient checks on sub-modules.
    pub fn from_vars(
        tape: &'t Tape<T>,
        config: &'p ModelConfig,
        params: &'p ModelParams<T>,
        vars: BTreeMap<String, Var<'t, T>>,
        mode: Mode,
        dropout_seed: u64,
    ) -> Self {
        Self {
            tape,
            config,
            params,
            vars,
            mode,
            rng: RefCell::new(rng_from_seed(dropout_seed)),
            bn_stats: RefCell::new(Vec::new()),
            used: RefCell::new(BTreeSet::new()),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param_vars(&self) -> &BTreeMap<String, Var<'t, T>> {
        &self.vars
    }

    /// Parameter names read by the forward passes run so far.
    pub fn used_names(&self) -> BTreeSet<String> {
        self.used.borrow().clone()
    }

    pub fn take_bn_stats(&self) -> BnBatchStats<T> {
        std::mem::take(&mut self.bn_stats.borrow_mut())
    }

    pub fn p(&self, name: &str) -> Result<Var<'t, T>> {
        self.used.borrow_mut().insert(name.to_string());
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("parameter {name} is not defined by this config")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    fn conv(&self, name: &str, x: Var<'t, T>, stride: usize, groups: usize) -> Result<Var<'t, T>> {
        let w = self.p(&format!("{name}.weight"))?;
        let bias_name = format!("{name}.bias");
        let b = if self.has(&bias_name) {
            Some(self.p(&bias_name)?)
        } else {
            None
        };
        let k = w.shape()[2];
        x.conv2d(w, b, Conv2dGeom::new(stride, k / 2, groups))
    }

    fn norm(&self, name: &str, x: Var<'t, T>) -> Result<Var<'t, T>> {
        if self.config.norm == NormKind::Identity {
            return Ok(x);
        }
        let gamma = self.p(&format!("{name}.gamma"))?;
        let beta = self.p(&format!("{name}.beta"))?;
        let eps = self.config.bn_eps;
        match self.mode {
            Mode::Train => {
                let (y, stats) = x.batch_norm(gamma, beta, BnMode::Train, eps)?;
                if let Some((m, v)) = stats {
                    self.bn_stats.borrow_mut().push((name.to_string(), m, v));
                }
                Ok(y)
            }
            Mode::Eval => {
                let buf = |s: &str| {
                    self.params
                        .buffers
                        .get(&format!("{name}.{s}"))
                        .ok_or_else(|| Error::Config(format!("missing buffer {name}.{s}")))
                };
                let (rm, rv) = (buf("running_mean")?, buf("running_var")?);
                let mode = BnMode::Eval {
                    running_mean: rm.data(),
                    running_var: rv.data(),
                };
                Ok(x.batch_norm(gamma, beta, mode, eps)?.0)
            }
        }
    }

    fn dropout(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        match self.mode {
            Mode::Train => x.dropout(self.config.dropout_p, Some(&mut self.rng.borrow_mut())),
            Mode::Eval => Ok(x),
        }
    }

    fn scalar4(&self, name: &str) -> Result<Var<'t, T>> {
        self.p(name)?.reshape(&[1, 1, 1, 1])
    }
}

/// Four 3x3 strided conv + norm + relu layers: `(B,2,64,32) -> (B,C1,4,2)` at default strides.
pub fn patch_embed<'t, T: Real>(s: &Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    if shape.len() != 4 || shape[1] != s.config.in_channels {
        return Err(Error::shape(
            "patch_embed",
            format!("expected (B,{},H,W), got {shape:?}", s.config.in_channels),
        ));
    }
    let mut h = x;
    for (i, &stride) in s.config.stem_strides.iter().enumerate() {
        h = s.conv(&format!("stem.conv{i}"), h, stride, 1)?;
        h = s.norm(&format!("stem.norm{i}"), h)?.relu();
    }
    Ok(h)
}

/// `sigmoid(MLP(avgpool F) + MLP(maxpool F))`, shape `(B,C,1,1)`.
pub fn channel_attention<'t, T: Real>(s: &Session<'t, '_, T>, prefix: &str, f: Var<'t, T>) -> Result<Var<'t, T>> {
    let avg = f.mean_axes(&[2, 3])?;
    let max = f.max_axes(&[2, 3])?;
    let mlp = |v: Var<'t, T>| -> Result<Var<'t, T>> {
        let h = s.conv(&format!("{prefix}.ca_fc1"), v, 1, 1)?.relu();
        s.conv(&format!("{prefix}.ca_fc2"), h, 1, 1)
    };
    Ok(mlp(avg)?.add(mlp(max)?)?.sigmoid())
}

/// `sigmoid(conv7x7([channel-avg F; channel-max F]))`, shape `(B,1,H,W)`.
pub fn spatial_attention<'t, T: Real>(s: &Session<'t, '_, T>, prefix: &str, f: Var<'t, T>) -> Result<Var<'t, T>> {
    let avg = f.mean_axes(&[1])?;
    let max = f.max_axes(&[1])?;
    let cat = s.tape.concat(&[avg, max], 1)?;
    Ok(s.conv(&format!("{prefix}.sa_conv"), cat, 1, 1)?.sigmoid())
}

/// Per-sample `(x - min) / (max - min + eps)` over all non-batch axes.
pub fn min_max_norm<'t, T: Real>(x: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
    let axes: Vec<usize> = (1..x.shape().len()).collect();
    if axes.is_empty() {
        return Err(Error::shape("min_max_norm", "need a batch axis and at least one more"));
    }
    let mn = x.min_axes(&axes)?;
    let mx = x.max_axes(&axes)?;
    let range = mx.sub(mn)?.add_scalar(T::lit(eps));
    x.sub(mn)?.div(range)
}

/// Hybrid attention: `alpha * N(Fc) + beta * N(Fs)` with `N` min-max
/// normalization, `Fc = channel gate * F`, `Fs = spatial gate * F`.
pub fn ahab<'t, T: Real>(s: &Session<'t, '_, T>, prefix: &str, f: Var<'t, T>) -> Result<Var<'t, T>> {
    let fc = channel_attention(s, prefix, f)?.mul(f)?;
    let fs = spatial_attention(s, prefix, f)?.mul(f)?;
    let eps = s.config.minmax_eps;
    let a = min_max_norm(fc, eps)?.mul(s.scalar4(&format!("{prefix}.alpha"))?)?;
    let b = min_max_norm(fs, eps)?.mul(s.scalar4(&format!("{prefix}.beta"))?)?;
    a.add(b)
}

/// Intermediate tensors of one single-head attention pass.
pub struct ShsaParts<'t, T: Real> {
    /// `(B, N, N)` row-stochastic attention matrix.
    pub attention: Var<'t, T>,
    /// `(B, C, H, W)`: attended channels followed by the untouched residual channels.
    pub concat: Var<'t, T>,
    pub output: Var<'t, T>,
}

pub fn shsa_parts<'t, T: Real>(s: &Session<'t, '_, T>, prefix: &str, x: Var<'t, T>) -> Result<ShsaParts<'t, T>> {
    let shape = x.shape();
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let cp = s.config.partial_channels(c);
    if cp < 1 || cp >= c {
        return Err(Error::Config(format!("{c} channels give {cp} attention channels")));
    }
    let n = h * w;
    let dqk = s.config.qk_dim;
    let x_att = x.narrow(1, 0, cp)?;
    let x_res = x.narrow(1, cp, c - cp)?;
    let tokens = x_att.reshape(&[b, cp, n])?.transpose_last2()?.reshape(&[b * n, cp])?;
    let q = tokens.matmul(s.p(&format!("{prefix}.wq"))?)?.reshape(&[b, n, dqk])?;
    let k = tokens.matmul(s.p(&format!("{prefix}.wk"))?)?.reshape(&[b, n, dqk])?;
    let v = tokens.matmul(s.p(&format!("{prefix}.wv"))?)?.reshape(&[b, n, cp])?;
    let scores = q.matmul(k.transpose_last2()?)?.scale(T::lit(1.0 / (dqk as f64).sqrt()));
    let attention = scores.softmax(2)?;
    let attended = attention
        .matmul(v)?
        .transpose_last2()?
        .reshape(&[b, cp, h, w])?;
    let concat = s.tape.concat(&[attended, x_res], 1)?;
    let output = s.conv(&format!("{prefix}.proj"), concat, 1, 1)?;
    Ok(ShsaParts {
        attention,
        concat,
        output,
    })
}

pub fn shsa<'t, T: Real>(s: &Session<'t, '_, T>, prefix: &str, x: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(shsa_parts(s, prefix, x)?.output)
}

/// `X + Drop(fc2(Drop(relu(norm(fc1 X)))))`; without the `X +` when the
/// plain-FFN ablation is configured.
pub fn res_ffn<'t, T: Real>(s: &Session<'t, '_, T>, prefix: &str, x: Var<'t, T>) -> Result<Var<'t, T>> {
    let h = s.conv(&format!("{prefix}.fc1"), x, 1, 1)?;
    let h = s.dropout(s.norm(&format!("{prefix}.norm"), h)?.relu())?;
    let out = s.dropout(s.conv(&format!("{prefix}.fc2"), h, 1, 1)?)?;
    if s.config.use_res_ffn {
        x.add(out)
    } else {
        Ok(out)
    }
}

pub fn ra_shvit_block<'t, T: Real>(
    s: &Session<'t, '_, T>,
    prefix: &str,
    stage: usize,
    x: Var<'t, T>,
) -> Result<Var<'t, T>> {
    if !(1..=3).contains(&stage) {
        return Err(Error::InvalidArgument(format!("stage {stage} out of range 1..=3")));
    }
    let c = x.shape()[1];
    let dw = s.conv(&format!("{prefix}.dw"), x, 1, c)?;
    let x1 = x.add(s.norm(&format!("{prefix}.dw_norm"), dw)?)?;
    let x2 = if stage >= 2 {
        x1.add(shsa(s, &format!("{prefix}.shsa"), x1)?)?
    } else {
        x1
    };
    let x3 = res_ffn(s, &format!("{prefix}.ffn"), x2)?;
    if s.config.use_ahab && s.config.ahab_placement == AhabPlacement::PerBlock {
        ahab(s, &format!("{prefix}.ahab"), x3)?.add(x)
    } else {
        Ok(x3)
    }
}

/// Stage-1 block, inverted residual with a stride-2 depthwise conv, stage-1 block.
pub fn downsample<'t, T: Real>(s: &Session<'t, '_, T>, prefix: &str, x: Var<'t, T>) -> Result<Var<'t, T>> {
    let x = ra_shvit_block(s, &format!("{prefix}.pre"), 1, x)?;
    let ir = format!("{prefix}.ir");
    let h = s.conv(&format!("{ir}.expand"), x, 1, 1)?;
    let h = s.norm(&format!("{ir}.expand_norm"), h)?.relu();
    let groups = h.shape()[1];
    let h = s.conv(&format!("{ir}.dw"), h, 2, groups)?;
    let h = s.norm(&format!("{ir}.dw_norm"), h)?.relu();
    let h = s.conv(&format!("{ir}.project"), h, 1, 1)?;
    let h = s.norm(&format!("{ir}.project_norm"), h)?;
    ra_shvit_block(s, &format!("{prefix}.post"), 1, h)
}

pub struct ForwardOutput<'t, T: Real> {
    pub logits: Var<'t, T>,
    /// Pooled stage-3 vector plus the long-skip vector: the classifier input.
    pub features: Var<'t, T>,
    pub trace: Vec<(String, Vec<usize>)>,
}

pub fn forward<'t, T: Real>(s: &Session<'t, '_, T>, images: Var<'t, T>) -> Result<ForwardOutput<'t, T>> {
    let cfg = s.config;
    let mut trace = vec![("input".to_string(), images.shape())];
    let stem = patch_embed(s, images)?;
    trace.push(("stem".into(), stem.shape()));
    let mut x = stem;
    for stage in 1..=3 {
        if stage > 1 {
            x = downsample(s, &format!("down{}", stage - 1), x)?;
            trace.push((format!("down{}", stage - 1), x.shape()));
        }
        for j in 0..cfg.depths[stage - 1] {
            x = ra_shvit_block(s, &format!("stage{stage}.block{j}"), stage, x)?;
        }
        if cfg.use_ahab && cfg.ahab_placement == AhabPlacement::PerStage {
            x = ahab(s, &format!("stage{stage}.ahab"), x)?.add(x)?;
        }
        trace.push((format!("stage{stage}"), x.shape()));
    }
    let b = x.shape()[0];
    let c3 = x.shape()[1];
    let mut features = x.mean_axes(&[2, 3])?.reshape(&[b, c3])?;
    if cfg.long_skip {
        let skip = s.conv("long_skip", stem, 1, 1)?.mean_axes(&[2, 3])?.reshape(&[b, c3])?;
        features = features.add(skip)?;
    }
    let mut h = features;
    let layers = cfg.head_hidden.len() + 1;
    for i in 0..layers {
        h = h
            .matmul(s.p(&format!("head.fc{i}.weight"))?)?
            .add(s.p(&format!("head.fc{i}.bias"))?)?;
        if i + 1 < layers {
            h = h.relu();
        }
    }
    trace.push(("logits".into(), h.shape()));
    Ok(ForwardOutput {
        logits: h,
        features,
        trace,
    })
}

/// Stacks `(C,H,W)` images into a `(B,C,H,W)` tensor.
pub fn stack_images<T: Real>(images: &[&Tensor<f64>]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::EmptyInput("no images to stack".into()))?
        .shape()
        .to_vec();
    let mut data = Vec::with_capacity(images.len() * first.iter().product::<usize>());
    for img in images {
        if img.shape() != first.as_slice() {
            return Err(Error::shape("stack_images", format!("{:?} vs {first:?}", img.shape())));
        }
        data.extend(img.data().iter().map(|&v| T::lit(v)));
    }
    let mut shape = vec![images.len()];
    shape.extend(first);
    Tensor::new(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::arch::Architecture;

    fn input(cfg: &ModelConfig, b: usize, seed: f64) -> Tensor<f64> {
        let [h, w] = cfg.input_hw;
        Tensor::from_fn(&[b, cfg.in_channels, h, w], |i| ((i as f64 + seed) * 0.731).sin())
    }

    fn feature_map(shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i as f64) * 1.37).cos() * 2.0 + 0.1 * i as f64)
    }

    #[test]
    fn default_model_shapes_follow_the_architecture_trace() {
        let cfg = ModelConfig::default();
        let params: ModelParams<f64> = ModelParams::init(&cfg, 1).unwrap();
        let tape = Tape::new();
        let s = Session::new(&tape, &cfg, &params, Mode::Eval, 0, false).unwrap();
        let out = forward(&s, tape.constant(input(&cfg, 2, 0.0))).unwrap();
        assert_eq!(out.logits.shape(), vec![2, 10]);
        assert_eq!(out.features.shape(), vec![2, 320]);
        let arch = Architecture::of(&cfg);
        let got: Vec<Vec<usize>> = out.trace[1..out.trace.len() - 1].iter().map(|t| t.1[1..].to_vec()).collect();
        let want: Vec<Vec<usize>> = arch.trace.iter().map(|t| t.1.to_vec()).collect();
        assert_eq!(got, want);
        assert!(out.logits.value().all_finite());
    }

    #[test]
    fn forward_reads_exactly_the_declared_parameters() {
        for cfg in [
            ModelConfig::tiny(4),
            ModelConfig {
                ahab_placement: AhabPlacement::PerStage,
                head_hidden: vec![7],
                ..ModelConfig::gradcheck_tiny()
            },
            ModelConfig {
                use_ahab: false,
                long_skip: false,
                ..ModelConfig::gradcheck_tiny()
            },
        ] {
            let params: ModelParams<f64> = ModelParams::init(&cfg, 2).unwrap();
            let tape = Tape::new();
            let s = Session::new(&tape, &cfg, &params, Mode::Train, 0, true).unwrap();
            forward(&s, tape.constant(input(&cfg, 2, 0.5))).unwrap();
            let declared: BTreeSet<String> = params.params.keys().cloned().collect();
            assert_eq!(s.used_names(), declared);
            let norms = Architecture::of(&cfg).params.iter().filter(|p| p.buffer).count() / 2;
            assert_eq!(s.take_bn_stats().len(), norms);
        }
    }

    #[test]
    fn block_with_zero_attention_scales_is_the_identity() {
        let cfg = ModelConfig::gradcheck_tiny();
        let mut params: ModelParams<f64> = ModelParams::init(&cfg, 3).unwrap();
        for name in ["stage2.block0.ahab.alpha", "stage2.block0.ahab.beta"] {
            params.params.insert(name.into(), Tensor::zeros(&[1]));
        }
        let tape = Tape::new();
        let s = Session::new(&tape, &cfg, &params, Mode::Eval, 0, false).unwrap();
        let x = feature_map(&[2, 12, 2, 2]);
        let y = ra_shvit_block(&s, "stage2.block0", 2, tape.constant(x.clone())).unwrap();
        assert!(y.value().max_abs_diff(&x) == 0.0);
    }

    #[test]
    fn neutral_gates_halve_the_input_before_normalization() {
        let cfg = ModelConfig::gradcheck_tiny();
        let mut params: ModelParams<f64> = ModelParams::init(&cfg, 4).unwrap();
        let p = "stage1.block0.ahab";
        for suffix in ["ca_fc1.weight", "ca_fc2.weight", "sa_conv.weight"] {
            let name = format!("{p}.{suffix}");
            let shape = params.params[&name].shape().to_vec();
            params.params.insert(name, Tensor::zeros(&shape));
        }
        params.params.insert(format!("{p}.alpha"), Tensor::full(&[1], 0.7));
        params.params.insert(format!("{p}.beta"), Tensor::full(&[1], 1.9));
        let tape = Tape::new();
        let s = Session::new(&tape, &cfg, &params, Mode::Eval, 0, false).unwrap();
        let f = feature_map(&[2, 8, 2, 2]);
        let got = ahab(&s, p, tape.constant(f.clone())).unwrap().value();
        // oracle: per-sample min-max of 0.5 F, times alpha + beta
        let per = 8 * 4;
        let mut want = vec![0.0; f.numel()];
        for b in 0..2 {
            let xs: Vec<f64> = f.data()[b * per..(b + 1) * per].iter().map(|v| 0.5 * v).collect();
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for (i, v) in xs.iter().enumerate() {
                want[b * per + i] = 2.6 * (v - lo) / (hi - lo + 1e-6);
            }
        }
        assert!(got.max_abs_diff(&Tensor::new(f.shape(), want).unwrap()) < 1e-12);
    }

    #[test]
    fn min_max_norm_without_eps_is_scale_invariant() {
        let tape = Tape::<f64>::new();
        let f = feature_map(&[3, 4, 2, 3]);
        let a = min_max_norm(tape.constant(f.clone()), 0.0).unwrap().value();
        let b = min_max_norm(tape.constant(f.map(|v| 7.5 * v)), 0.0).unwrap().value();
        assert!(a.max_abs_diff(&b) < 1e-12);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn attention_keeps_residual_channels_and_rows_are_stochastic() {
        let cfg = ModelConfig::gradcheck_tiny();
        let params: ModelParams<f64> = ModelParams::init(&cfg, 5).unwrap();
        let tape = Tape::new();
        let s = Session::new(&tape, &cfg, &params, Mode::Eval, 0, false).unwrap();
        let c = 12;
        let cp = cfg.partial_channels(c);
        let x = feature_map(&[2, c, 2, 3]);
        let parts = shsa_parts(&s, "stage2.block0.shsa", tape.constant(x.clone())).unwrap();
        let cat = parts.concat.value();
        for b in 0..2 {
            for ch in cp..c {
                for i in 0..6 {
                    let off = (b * c + ch) * 6 + i;
                    assert_eq!(cat.data()[off], x.data()[off]);
                }
            }
        }
        let att = parts.attention.value();
        assert_eq!(att.shape(), &[2, 6, 6]);
        for row in att.data().chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_token_and_identical_tokens() {
        let cfg = ModelConfig::gradcheck_tiny();
        let params: ModelParams<f64> = ModelParams::init(&cfg, 6).unwrap();
        let tape = Tape::new();
        let s = Session::new(&tape, &cfg, &params, Mode::Eval, 0, false).unwrap();
        let one = shsa_parts(&s, "stage3.block0.shsa", tape.constant(feature_map(&[2, 16, 1, 1]))).unwrap();
        assert!(one.attention.value().data().iter().all(|&a| (a - 1.0).abs() < 1e-15));

        let same = Tensor::from_fn(&[1, 16, 2, 2], |i| (i / 4) as f64 * 0.3 - 1.0);
        let parts = shsa_parts(&s, "stage3.block0.shsa", tape.constant(same)).unwrap();
        assert!(parts.attention.value().data().iter().all(|&a| (a - 0.25).abs() < 1e-12));
    }

    #[test]
    fn downsample_gradients_reach_every_parameter() {
        let cfg = ModelConfig::gradcheck_tiny();
        let params: ModelParams<f64> = ModelParams::init(&cfg, 7).unwrap();
        let tape = Tape::new();
        let s = Session::new(&tape, &cfg, &params, Mode::Train, 0, true).unwrap();
        let y = downsample(&s, "down1", tape.constant(feature_map(&[3, 8, 2, 2]))).unwrap();
        assert_eq!(y.shape(), vec![3, 12, 1, 1]);
        let loss = y.mul(y).unwrap().sum();
        let grads = tape.backward(loss).unwrap();
        for (name, v) in s.param_vars() {
            if name.starts_with("down1.") && !name.ends_with(".beta") {
                let g = grads.wrt(*v);
                assert!(g.data().iter().any(|&x| x != 0.0), "{name} has zero gradient");
            }
        }
    }

    #[test]
    fn wrong_input_channels_are_rejected() {
        let cfg = ModelConfig::gradcheck_tiny();
        let params: ModelParams<f64> = ModelParams::init(&cfg, 8).unwrap();
        let tape = Tape::new();
        let s = Session::new(&tape, &cfg, &params, Mode::Eval, 0, false).unwrap();
        let x = tape.constant(Tensor::zeros(&[1, 3, 8, 8]));
        assert!(matches!(forward(&s, x), Err(Error::Shape { .. })));
    }
}
