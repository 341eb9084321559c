use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState<T: Real> {
    pub config: AdamWConfig,
    pub step: u64,
    pub first_moment: BTreeMap<String, Tensor<T>>,
    pub second_moment: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }
}

/// One AdamW step with decoupled weight decay:
/// `theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)`.
///
/// Parameters without an entry in `grads` are treated as having zero gradient.
pub fn adamw_step<T: Real>(
    params: &mut BTreeMap<String, Tensor<T>>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    let c = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
    let (lr, eps, wd) = (T::lit(c.lr), T::lit(c.eps), T::lit(c.weight_decay));
    let (bc1, bc2) = (T::lit(bc1), T::lit(bc2));
    for (name, p) in params.iter_mut() {
        let g = grads.get(name);
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    "adamw_step",
                    format!("{name}: grad {:?} vs param {:?}", g.shape(), p.shape()),
                ));
            }
        }
        let m = state
            .first_moment
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state
            .second_moment
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        for i in 0..p.numel() {
            let gi = g.map_or(T::zero(), |g| g.data()[i]);
            let mi = b1 * m.data()[i] + (T::one() - b1) * gi;
            let vi = b2 * v.data()[i] + (T::one() - b2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            let theta = p.data()[i];
            p.data_mut()[i] = theta - lr * (m_hat / (v_hat.sqrt() + eps) + wd * theta);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([("w".to_string(), Tensor::full(&[3], v))])
    }

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let mut p = one_param(0.7);
        let g = BTreeMap::from([("w".to_string(), Tensor::zeros(&[3]))]);
        let mut s = OptimizerState::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        for _ in 0..5 {
            adamw_step(&mut p, &g, &mut s).unwrap();
        }
        assert_eq!(p, one_param(0.7));
    }

    #[test]
    fn decoupled_decay_shrinks_geometrically() {
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut p = one_param(2.0);
        let mut s = OptimizerState::new(cfg);
        let g = BTreeMap::new();
        for k in 1..=4 {
            adamw_step(&mut p, &g, &mut s).unwrap();
            let expected = 2.0 * (1.0f64 - 0.1 * 0.5).powi(k);
            assert!((p["w"].data()[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_step_size_tends_to_lr() {
        // With a constant gradient, m_hat = g and v_hat = g^2 exactly after bias
        // correction, so every step moves by lr * g/(|g| + eps).
        let cfg = AdamWConfig {
            lr: 0.01,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = one_param(0.0);
        let g = BTreeMap::from([("w".to_string(), Tensor::full(&[3], 0.3))]);
        let mut s = OptimizerState::new(cfg);
        let mut prev = 0.0;
        for _ in 0..200 {
            adamw_step(&mut p, &g, &mut s).unwrap();
            let cur = p["w"].data()[0];
            let step = prev - cur;
            assert!((step - 0.01 * 0.3 / (0.3 + 1e-8)).abs() < 1e-12, "step {step}");
            prev = cur;
        }
        assert_eq!(s.step, 200);
    }

    #[test]
    fn zero_lr_is_identity() {
        let cfg = AdamWConfig {
            lr: 0.0,
            ..Default::default()
        };
        let mut p = one_param(-1.25);
        let g = BTreeMap::from([("w".to_string(), Tensor::full(&[3], 4.0))]);
        let mut s = OptimizerState::new(cfg);
        adamw_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(p, one_param(-1.25));
    }

    #[test]
    fn moment_shapes_follow_params() {
        let mut p = BTreeMap::from([("a".to_string(), Tensor::<f32>::zeros(&[2, 5]))]);
        let mut s = OptimizerState::new(AdamWConfig::default());
        adamw_step(&mut p, &BTreeMap::new(), &mut s).unwrap();
        assert_eq!(s.first_moment["a"].shape(), &[2, 5]);
        assert_eq!(s.second_moment["a"].shape(), &[2, 5]);
    }
}
