use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};

use super::arch::{Architecture, Init};
use super::config::ModelConfig;
use crate::diffcore::{Real, Tensor};
use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// Named learnable tensors plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Real = f32> {
    pub params: BTreeMap<String, Tensor<T>>,
    pub buffers: BTreeMap<String, Tensor<T>>,
}

fn sample_init<T: Real>(init: Init, shape: &[usize], rng: &mut crate::rng::Rng) -> Tensor<T> {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::ones(shape),
        Init::ConvFanOut { fan_out } => {
            let sd = (2.0 / fan_out.max(1) as f64).sqrt();
            Tensor::from_fn(shape, |_| {
                let z: f64 = StandardNormal.sample(rng);
                T::lit(sd * z)
            })
        }
        Init::TruncNormal => Tensor::from_fn(shape, |_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break T::lit(0.02 * z);
            }
        }),
    }
}

impl<T: Real> ModelParams<T> {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let arch = Architecture::of(config);
        let mut rng = rng_from_seed(seed);
        let mut params = BTreeMap::new();
        let mut buffers = BTreeMap::new();
        for spec in &arch.params {
            let t = sample_init(spec.init, &spec.shape, &mut rng);
            if spec.buffer {
                buffers.insert(spec.name.clone(), t);
            } else {
                params.insert(spec.name.clone(), t);
            }
        }
        Ok(Self { params, buffers })
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Checks that names and shapes are exactly those `config` induces.
    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let arch = Architecture::of(config);
        let mut expected_p = 0;
        let mut expected_b = 0;
        for spec in &arch.params {
            let map = if spec.buffer {
                expected_b += 1;
                &self.buffers
            } else {
                expected_p += 1;
                &self.params
            };
            match map.get(&spec.name) {
                Some(t) if t.shape() == spec.shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Config(format!(
                        "{}: shape {:?}, config expects {:?}",
                        spec.name,
                        t.shape(),
                        spec.shape
                    )))
                }
                None => return Err(Error::Config(format!("missing tensor {}", spec.name))),
            }
        }
        if self.params.len() != expected_p || self.buffers.len() != expected_b {
            return Err(Error::Config(format!(
                "tensor set does not match config: {} params / {} buffers, expected {expected_p} / {expected_b}",
                self.params.len(),
                self.buffers.len()
            )));
        }
        Ok(())
    }

    /// Folds a batch's mean and biased variance into `<layer>.running_*`.
    pub fn update_bn(&mut self, layer: &str, mean: &[T], var: &[T], momentum: f64) {
        let m = T::lit(momentum);
        let keep = T::one() - m;
        for (suffix, batch) in [("running_mean", mean), ("running_var", var)] {
            if let Some(t) = self.buffers.get_mut(&format!("{layer}.{suffix}")) {
                for (r, &b) in t.data_mut().iter_mut().zip(batch) {
                    *r = keep * *r + m * b;
                }
            }
        }
    }
}
