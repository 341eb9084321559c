//! Time-domain windows to model-ready spectral images.
//!
//! Pipeline order: [`normalize`] (z-score) -> optional [`inject_noise`] ->
//! [`featurize`] (2048-point FFT, real/imag planes reshaped row-major to 64x32).

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::rng::rng_from_seed;
use crate::{Error, Result};

pub const WINDOW: usize = 2048;
pub const IMAGE_HEIGHT: usize = 64;
pub const IMAGE_WIDTH: usize = 32;
pub const IMAGE_CHANNELS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSegment {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
    pub source_id: String,
}

impl SignalSegment {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64, source_id: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("segment has no samples".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("sample {i} is not finite")));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample rate {sample_rate_hz} must be positive"
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            source_id: source_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean power `sum(x^2)/n`.
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }

    fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate_hz: self.sample_rate_hz,
            source_id: self.source_id.clone(),
        }
    }
}

fn mean_power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(snr_db: f64, seed: u64) -> Result<Self> {
        if !snr_db.is_finite() {
            return Err(Error::InvalidArgument(format!("snr_db {snr_db} must be finite")));
        }
        Ok(Self { snr_db, seed })
    }
}

/// `(2, 64, 32)` image: channel 0 real part, channel 1 imaginary part.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralImage {
    pub data: Tensor<f64>,
    pub label: Option<usize>,
}

/// How a segment is packed into the `(2, 64, 32)` model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// FFT real/imaginary planes.
    #[default]
    Fft,
    /// Time-domain samples in channel 0, zeros in channel 1.
    Raw,
}

/// Cuts `signal` into windows `[i*stride, i*stride + window)`.
pub fn sliding_window(
    signal: &[f64],
    window: usize,
    stride: usize,
    sample_rate_hz: f64,
    source_id: &str,
) -> Result<Vec<SignalSegment>> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument("window and stride must be positive".into()));
    }
    if signal.len() < window {
        return Err(Error::EmptyInput(format!(
            "signal of length {} is shorter than window {window}",
            signal.len()
        )));
    }
    let count = (signal.len() - window) / stride + 1;
    (0..count)
        .map(|i| {
            let start = i * stride;
            SignalSegment::new(
                signal[start..start + window].to_vec(),
                sample_rate_hz,
                format!("{source_id}@{start}"),
            )
        })
        .collect()
}

/// Z-score with population moments; (near-)constant input maps to zeros.
pub fn normalize(segment: &SignalSegment) -> SignalSegment {
    let x = &segment.samples;
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if sd <= 1e-12 * scale {
        return segment.with_samples(vec![0.0; x.len()]);
    }
    segment.with_samples(x.iter().map(|v| (v - mean) / sd).collect())
}

/// Adds white Gaussian noise whose mean power is exactly
/// `P_signal / 10^(snr_db/10)`.
///
/// Standard-normal draws from the seeded generator are rescaled so that the
/// realized noise power hits the target, which makes the empirical SNR of
/// every output equal `snr_db` up to rounding.
pub fn inject_noise(segment: &SignalSegment, spec: &NoiseSpec) -> Result<SignalSegment> {
    let p_signal = segment.power();
    if !(p_signal > 0.0) {
        return Err(Error::DegenerateSignal(format!(
            "segment {} has zero power",
            segment.source_id
        )));
    }
    if !spec.snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!("snr_db {} must be finite", spec.snr_db)));
    }
    let p_noise = p_signal / 10f64.powf(spec.snr_db / 10.0);
    let mut rng = rng_from_seed(spec.seed);
    let draws: Vec<f64> = (0..segment.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let p_draw = mean_power(&draws);
    let gain = if p_draw > 0.0 { (p_noise / p_draw).sqrt() } else { 0.0 };
    Ok(segment.with_samples(
        segment
            .samples
            .iter()
            .zip(&draws)
            .map(|(s, z)| s + gain * z)
            .collect(),
    ))
}

/// `10*log10(P_clean / P_residual)` with `residual = noisy - clean`.
/// Returns `f64::INFINITY` when the residual is exactly zero.
pub fn measure_snr(clean: &SignalSegment, noisy: &SignalSegment) -> Result<f64> {
    if clean.len() != noisy.len() {
        return Err(Error::shape(
            "measure_snr",
            format!("lengths differ: {} vs {}", clean.len(), noisy.len()),
        ));
    }
    let p_clean = clean.power();
    if !(p_clean > 0.0) {
        return Err(Error::DegenerateSignal("clean segment has zero power".into()));
    }
    let residual: Vec<f64> = noisy
        .samples
        .iter()
        .zip(&clean.samples)
        .map(|(n, c)| n - c)
        .collect();
    let p_res = mean_power(&residual);
    if p_res == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (p_clean / p_res).log10())
}

/// Unnormalized forward DFT `X[k] = sum_t x[t] e^{-2 pi i k t / N}` by
/// iterative radix-2 decimation in time.
pub fn fft(x: &[f64]) -> Result<Vec<Complex64>> {
    let n = x.len();
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::UnsupportedLength(n));
    }
    let bits = n.trailing_zeros();
    let mut buf: Vec<Complex64> = (0..n)
        .map(|i| {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            Complex64::new(x[j], 0.0)
        })
        .collect();
    // Twiddles from direct sin/cos evaluation rather than a recurrence.
    let twiddles: Vec<Complex64> = (0..n / 2)
        .map(|k| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 / n as f64))
        .collect();
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = twiddles[k * step];
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
    Ok(buf)
}

/// FFT real/imaginary planes of a 2048-sample segment as a `(2, 64, 32)` image.
pub fn featurize(segment: &SignalSegment) -> Result<SpectralImage> {
    check_window(segment)?;
    let spectrum = fft(&segment.samples)?;
    let mut data = Vec::with_capacity(IMAGE_CHANNELS * WINDOW);
    data.extend(spectrum.iter().map(|c| c.re));
    data.extend(spectrum.iter().map(|c| c.im));
    Ok(SpectralImage {
        data: Tensor::new(&[IMAGE_CHANNELS, IMAGE_HEIGHT, IMAGE_WIDTH], data)?,
        label: None,
    })
}

/// Time-domain packing used by the raw-input ablation.
pub fn featurize_raw(segment: &SignalSegment) -> Result<SpectralImage> {
    check_window(segment)?;
    let mut data = segment.samples.clone();
    data.extend(std::iter::repeat_n(0.0, WINDOW));
    Ok(SpectralImage {
        data: Tensor::new(&[IMAGE_CHANNELS, IMAGE_HEIGHT, IMAGE_WIDTH], data)?,
        label: None,
    })
}

pub fn featurize_with(segment: &SignalSegment, mode: FeatureMode) -> Result<SpectralImage> {
    match mode {
        FeatureMode::Fft => featurize(segment),
        FeatureMode::Raw => featurize_raw(segment),
    }
}

fn check_window(segment: &SignalSegment) -> Result<()> {
    if segment.len() != WINDOW {
        return Err(Error::shape(
            "featurize",
            format!("segment has {} samples, expected {WINDOW}", segment.len()),
        ));
    }
    Ok(())
}
