//! Registry of finite-difference gradient checks, run by `rashvit gradcheck`.
//!
//! Each check builds a scalar `sum(op(inputs) * R)` with a fixed weight
//! tensor `R` and compares tape gradients against central differences in
//! double precision.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::diffcore::{grad_check, pool, BnMode, Conv2dGeom, GradCheckReport, PoolKind, Tape, Tensor, Var};
use crate::model::forward::{ahab, downsample, forward, min_max_norm, ra_shvit_block, res_ffn, shsa};
use crate::model::{Mode, ModelConfig, ModelParams, Session};
use crate::Result;

/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Threshold for single ops and sub-modules.
pub const OP_THRESHOLD: f64 = 1e-6;
/// Threshold for the full tiny model.
pub const MODEL_THRESHOLD: f64 = 1e-5;

pub struct GradCheck {
    pub name: String,
    pub threshold: f64,
    pub run: Box<dyn Fn() -> Result<GradCheckReport> + Send + Sync>,
}

impl GradCheck {
    pub fn new(
        name: impl Into<String>,
        threshold: f64,
        run: impl Fn() -> Result<GradCheckReport> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            threshold,
            run: Box::new(run),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub threshold: f64,
    /// `None` when the check itself errored.
    pub max_rel_error: Option<f64>,
    pub coords_checked: usize,
    pub passed: bool,
    pub error: Option<String>,
}

pub fn run_checks(checks: &[GradCheck]) -> Vec<CheckResult> {
    checks
        .iter()
        .map(|c| match (c.run)() {
            Ok(r) => CheckResult {
                name: c.name.clone(),
                threshold: c.threshold,
                max_rel_error: Some(r.max_rel_error),
                coords_checked: r.coords_checked,
                passed: r.max_rel_error < c.threshold && r.max_rel_error.is_finite(),
                error: None,
            },
            Err(e) => CheckResult {
                name: c.name.clone(),
                threshold: c.threshold,
                max_rel_error: None,
                coords_checked: 0,
                passed: false,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

fn wave(shape: &[usize], phase: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |i| ((i as f64 + phase) * 0.7137).sin())
}

/// Values bounded away from zero, for kinked ops.
fn away_from_zero(shape: &[usize], phase: f64) -> Tensor<f64> {
    wave(shape, phase).map(|v| v.signum() * (0.1 + v.abs()))
}

fn weighted_sum<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>, phase: f64) -> Result<Var<'t, f64>> {
    let r = tape.constant(wave(&y.shape(), phase));
    Ok(y.mul(r)?.sum())
}

fn op_check(
    name: &str,
    inputs: Vec<Tensor<f64>>,
    f: impl for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>> + Send + Sync + Copy + 'static,
) -> GradCheck {
    GradCheck::new(name, OP_THRESHOLD, move || {
        grad_check(
            |tape, v| {
                let y = f(tape, v)?;
                weighted_sum(tape, y, 3.3)
            },
            &inputs,
            STEP,
        )
    })
}

type ModuleFn = for<'t, 'p> fn(&Session<'t, 'p, f64>, &str, Var<'t, f64>) -> Result<Var<'t, f64>>;

/// Checks a model sub-module over its input and every parameter under `prefix`.
fn module_check(name: &str, prefix: &'static str, input_shape: Vec<usize>, mode: Mode, body: ModuleFn) -> GradCheck {
    GradCheck::new(name, OP_THRESHOLD, move || {
        let config = ModelConfig::gradcheck_tiny();
        let params: ModelParams<f64> = ModelParams::init(&config, 17)?;
        let names: Vec<String> = params
            .params
            .keys()
            .filter(|k| k.starts_with(&format!("{prefix}.")))
            .cloned()
            .collect();
        let mut inputs = vec![wave(&input_shape, 0.25)];
        inputs.extend(names.iter().map(|n| perturb_init(n, &params.params[n])));
        grad_check(
            |tape, v| {
                let vars: BTreeMap<String, Var<'_, f64>> = names.iter().cloned().zip(v[1..].iter().copied()).collect();
                let session = Session::from_vars(tape, &config, &params, vars, mode, 0);
                let y = body(&session, prefix, v[0])?;
                weighted_sum(tape, y, 1.9)
            },
            &inputs,
            STEP,
        )
    })
}

/// Zero- and one-initialized tensors would hide some gradient paths, so the
/// checks move every parameter off its initial constant.
fn perturb_init(name: &str, t: &Tensor<f64>) -> Tensor<f64> {
    let salt = name.bytes().map(f64::from).sum::<f64>();
    let w = wave(t.shape(), salt);
    Tensor::new(
        t.shape(),
        t.data().iter().zip(w.data()).map(|(a, b)| a + 0.3 * b).collect(),
    )
    .expect("same shape")
}

fn full_model_check() -> GradCheck {
    GradCheck::new("full_tiny_model", MODEL_THRESHOLD, || {
        let config = ModelConfig::gradcheck_tiny();
        let params: ModelParams<f64> = ModelParams::init(&config, 23)?;
        let names: Vec<String> = params.params.keys().cloned().collect();
        let [h, w] = config.input_hw;
        let mut inputs = vec![wave(&[4, config.in_channels, h, w], 0.5)];
        inputs.extend(names.iter().map(|n| perturb_init(n, &params.params[n])));
        let labels = [0usize, 1, 2, 1];
        grad_check(
            |tape, v| {
                let vars: BTreeMap<String, Var<'_, f64>> = names.iter().cloned().zip(v[1..].iter().copied()).collect();
                let session = Session::from_vars(tape, &config, &params, vars, Mode::Train, 0);
                forward(&session, v[0])?.logits.cross_entropy(&labels)
            },
            &inputs,
            STEP,
        )
    })
}

fn shsa_module<'t>(s: &Session<'t, '_, f64>, p: &str, x: Var<'t, f64>) -> Result<Var<'t, f64>> {
    shsa(s, p, x)
}
fn ahab_module<'t>(s: &Session<'t, '_, f64>, p: &str, x: Var<'t, f64>) -> Result<Var<'t, f64>> {
    ahab(s, p, x)
}
fn ffn_module<'t>(s: &Session<'t, '_, f64>, p: &str, x: Var<'t, f64>) -> Result<Var<'t, f64>> {
    res_ffn(s, p, x)
}
fn block_module<'t>(s: &Session<'t, '_, f64>, p: &str, x: Var<'t, f64>) -> Result<Var<'t, f64>> {
    ra_shvit_block(s, p, 2, x)
}
fn down_module<'t>(s: &Session<'t, '_, f64>, p: &str, x: Var<'t, f64>) -> Result<Var<'t, f64>> {
    downsample(s, p, x)
}

/// Every registered check, in report order.
pub fn registry() -> Vec<GradCheck> {
    let x4 = [3, 4, 5, 4];
    vec![
        op_check("conv2d", vec![wave(&x4, 0.0), wave(&[6, 4, 3, 3], 1.0), wave(&[6], 2.0)], |_, v| {
            v[0].conv2d(v[1], Some(v[2]), Conv2dGeom::new(2, 1, 1))
        }),
        op_check("conv2d_depthwise", vec![wave(&x4, 0.0), wave(&[4, 1, 3, 3], 1.0)], |_, v| {
            v[0].conv2d(v[1], None, Conv2dGeom::new(1, 1, 4))
        }),
        op_check("conv2d_7x7", vec![wave(&[2, 2, 6, 5], 0.0), wave(&[1, 2, 7, 7], 1.0)], |_, v| {
            v[0].conv2d(v[1], None, Conv2dGeom::new(1, 3, 1))
        }),
        op_check(
            "batch_norm_train",
            vec![wave(&x4, 0.0), away_from_zero(&[4], 1.0), wave(&[4], 2.0)],
            |_, v| Ok(v[0].batch_norm(v[1], v[2], BnMode::Train, 1e-5)?.0),
        ),
        op_check(
            "batch_norm_eval",
            vec![wave(&x4, 0.0), away_from_zero(&[4], 1.0), wave(&[4], 2.0)],
            |_, v| {
                let mode = BnMode::Eval {
                    running_mean: &[0.1, -0.2, 0.3, 0.0],
                    running_var: &[1.0, 0.5, 2.0, 0.7],
                };
                Ok(v[0].batch_norm(v[1], v[2], mode, 1e-5)?.0)
            },
        ),
        op_check("softmax", vec![wave(&[3, 5, 6], 0.0)], |_, v| v[0].softmax(2)),
        op_check("sigmoid", vec![wave(&[4, 7], 0.0).map(|v| 3.0 * v)], |_, v| Ok(v[0].sigmoid())),
        op_check("relu", vec![away_from_zero(&[4, 7], 0.0)], |_, v| Ok(v[0].relu())),
        op_check("linear", vec![wave(&[5, 4], 0.0), wave(&[4, 3], 1.0), wave(&[3], 2.0)], |_, v| {
            v[0].matmul(v[1])?.add(v[2])
        }),
        op_check("batched_matmul", vec![wave(&[2, 3, 4], 0.0), wave(&[2, 4, 5], 1.0)], |_, v| {
            v[0].matmul(v[1])
        }),
        op_check("pool_avg_max", vec![wave(&x4, 0.0)], |_, v| {
            let a = pool(v[0], PoolKind::SpatialAvg)?;
            let m = pool(v[0], PoolKind::SpatialMax)?;
            let c = pool(v[0], PoolKind::ChannelMax)?;
            Ok(a.add(m)?.sum().add(c.sum())?.reshape(&[1])?)
        }),
        op_check("min_max_norm", vec![wave(&x4, 0.0)], |_, v| min_max_norm(v[0], 1e-6)),
        op_check("cross_entropy", vec![wave(&[4, 3], 0.0)], |_, v| {
            v[0].cross_entropy(&[0, 2, 1, 2])?.reshape(&[1])
        }),
        module_check("shsa", "stage2.block0.shsa", vec![3, 12, 2, 2], Mode::Train, shsa_module),
        module_check("ahab", "stage1.block0.ahab", vec![3, 8, 2, 2], Mode::Train, ahab_module),
        module_check("res_ffn", "stage1.block0.ffn", vec![4, 8, 2, 2], Mode::Train, ffn_module),
        module_check("ra_shvit_block", "stage2.block0", vec![4, 12, 2, 2], Mode::Train, block_module),
        module_check("downsample", "down1", vec![4, 8, 2, 2], Mode::Train, down_module),
        full_model_check(),
    ]
}

/// A check whose backward rule is deliberately wrong (`d/dx x^2 = x`), used
/// to confirm that the harness reports failures by name.
pub fn corrupted_fixture() -> GradCheck {
    let x = wave(&[6], 0.4);
    GradCheck::new("corrupted_square", OP_THRESHOLD, move || {
        grad_check(
            |tape, v| {
                let sq = tape.custom(
                    &[v[0]],
                    |xs| Ok(xs[0].map(|a| a * a)),
                    Box::new(|g, xs, _| {
                        vec![Tensor::new(
                            g.shape(),
                            g.data().iter().zip(xs[0].data()).map(|(g, x)| g * x).collect(),
                        )
                        .expect("same shape")]
                    }),
                )?;
                Ok(sq.sum())
            },
            std::slice::from_ref(&x),
            STEP,
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_check_passes() {
        let checks: Vec<GradCheck> = registry().into_iter().filter(|c| c.name != "full_tiny_model").collect();
        for r in run_checks(&checks) {
            assert!(r.passed, "{r:?}");
            assert!(r.coords_checked > 0);
        }
    }

    #[test]
    fn corrupted_rule_is_reported_by_name() {
        let r = run_checks(&[corrupted_fixture()]);
        assert!(!r[0].passed);
        assert_eq!(r[0].name, "corrupted_square");
        assert!(r[0].max_rel_error.unwrap() > 0.1);
    }
}
