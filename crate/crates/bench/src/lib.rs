//! Deterministic inputs shared by the criterion benches.

use rashvit_core::{ModelConfig, Tensor};

/// A two-tone test signal of length `n`.
pub fn signal(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64;
            (t * 0.0713).sin() + 0.3 * (t * 0.411).cos()
        })
        .collect()
}

/// `(b, in_channels, h, w)` batch in [-1, 1].
pub fn image_batch(cfg: &ModelConfig, b: usize) -> Tensor<f32> {
    let [h, w] = cfg.input_hw;
    Tensor::from_fn(&[b, cfg.in_channels, h, w], |i| ((i as f64) * 0.731).sin() as f32)
}

pub fn tensor(shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape, |i| ((i as f64) * 1.37).cos() as f32)
}
