use serde::{Deserialize, Serialize};

use super::tape::Var;
use super::tensor::Real;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    /// (B,C,H,W) -> (B,C,1,1)
    SpatialAvg,
    /// (B,C,H,W) -> (B,C,1,1)
    SpatialMax,
    /// (B,C,H,W) -> (B,1,H,W)
    ChannelAvg,
    /// (B,C,H,W) -> (B,1,H,W)
    ChannelMax,
    /// (B,C,H,W) -> (B,C)
    GlobalAvg,
}

pub fn pool<'t, T: Real>(x: Var<'t, T>, kind: PoolKind) -> Result<Var<'t, T>> {
    let s = x.shape();
    if s.len() != 4 || s.contains(&0) {
        return Err(Error::shape("pool", format!("expected non-empty (B,C,H,W), got {s:?}")));
    }
    match kind {
        PoolKind::SpatialAvg => x.mean_axes(&[2, 3]),
        PoolKind::SpatialMax => x.max_axes(&[2, 3]),
        PoolKind::ChannelAvg => x.mean_axes(&[1]),
        PoolKind::ChannelMax => x.max_axes(&[1]),
        PoolKind::GlobalAvg => x.mean_axes(&[2, 3])?.reshape(&[s[0], s[1]]),
    }
}

/// Running statistics for one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Real> BatchNormStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    /// `running <- (1 - momentum) * running + momentum * batch`, using the biased batch variance.
    pub fn update(&mut self, mean: &[T], var: &[T], momentum: f64) {
        let m = T::lit(momentum);
        let keep = T::one() - m;
        for (r, &b) in self.running_mean.iter_mut().zip(mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(var) {
            *r = keep * *r + m * b;
        }
    }
}
