use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, Provenance};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sigproc::{SignalSegment, WINDOW};
use crate::{Error, Result};

/// Generative parameters of one synthetic fault class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthClass {
    /// Impacts per second.
    pub impulse_rate_hz: f64,
    /// Ringing frequency excited by each impact.
    pub resonance_hz: f64,
    /// Exponential decay of the ringing, in 1/s.
    pub decay_per_s: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub sample_rate_hz: f64,
    #[serde(default = "default_len")]
    pub segment_len: usize,
    pub segments_per_class: usize,
    /// Standard deviation of the additive white background.
    pub noise_floor: f64,
    /// Relative per-impact amplitude jitter (uniform in `1 ± jitter`).
    #[serde(default)]
    pub amplitude_jitter: f64,
    pub seed: u64,
    pub classes: Vec<SynthClass>,
}

fn default_len() -> usize {
    WINDOW
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::standard(10, 64, 0)
    }
}

impl SynthSpec {
    /// Up to ten classes at 12 kHz, each with its own impact rate and
    /// resonance, loosely modelled on drive-end fault signatures.
    pub fn standard(num_classes: usize, segments_per_class: usize, seed: u64) -> Self {
        const TABLE: [(f64, f64, f64); 10] = [
            // (rate Hz, resonance Hz, decay 1/s)
            (30.0, 800.0, 600.0),
            (45.0, 1300.0, 700.0),
            (60.0, 1800.0, 800.0),
            (75.0, 2300.0, 600.0),
            (90.0, 2800.0, 700.0),
            (105.0, 3300.0, 800.0),
            (120.0, 3800.0, 600.0),
            (135.0, 4300.0, 700.0),
            (150.0, 4800.0, 800.0),
            (165.0, 5300.0, 900.0),
        ];
        let classes = (0..num_classes)
            .map(|k| {
                let (rate, res, decay) = TABLE[k % TABLE.len()];
                // wrap around with shifted rates if more than ten are requested
                let lap = (k / TABLE.len()) as f64;
                SynthClass {
                    impulse_rate_hz: rate + 7.0 * lap,
                    resonance_hz: res + 110.0 * lap,
                    decay_per_s: decay,
                    amplitude: 1.0,
                }
            })
            .collect();
        Self {
            sample_rate_hz: 12_000.0,
            segment_len: WINDOW,
            segments_per_class,
            noise_floor: 0.05,
            amplitude_jitter: 0.2,
            seed,
            classes,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return bad(format!("sample_rate_hz {} must be positive", self.sample_rate_hz));
        }
        if self.segment_len == 0 || self.segments_per_class == 0 {
            return bad("segment_len and segments_per_class must be positive".into());
        }
        if self.classes.len() < 2 {
            return bad(format!("need at least two classes, got {}", self.classes.len()));
        }
        if !(self.noise_floor >= 0.0) || !(0.0..1.0).contains(&self.amplitude_jitter) {
            return bad("noise_floor must be >= 0 and amplitude_jitter in [0, 1)".into());
        }
        for (k, c) in self.classes.iter().enumerate() {
            let ok = c.impulse_rate_hz > 0.0
                && c.resonance_hz >= 0.0
                && c.decay_per_s >= 0.0
                && c.amplitude >= 0.0
                && [c.impulse_rate_hz, c.resonance_hz, c.decay_per_s, c.amplitude]
                    .iter()
                    .all(|v| v.is_finite());
            if !ok {
                return bad(format!("class {k}: rates, resonance, decay and amplitude must be finite, rate > 0"));
            }
            if let Some(j) = self.classes[..k].iter().position(|o| o == c) {
                return bad(format!("classes {j} and {k} have identical generative parameters"));
            }
        }
        Ok(())
    }
}

/// One segment: a train of impacts with random phase and jittered amplitude,
/// each ringing at the class resonance, plus white background noise.
/// Samples are rounded to `f32` so archives round-trip exactly.
fn generate_segment(spec: &SynthSpec, class: &SynthClass, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let fs = spec.sample_rate_hz;
    let n = spec.segment_len;
    let period = 1.0 / class.impulse_rate_hz;
    // Start early enough that ringing from impacts before the window is present.
    let tail = if class.decay_per_s > 0.0 { 8.0 / class.decay_per_s } else { n as f64 / fs };
    let first = rng.random::<f64>() * period - (tail / period).ceil() * period;
    let mut x = vec![0.0; n];
    let end = n as f64 / fs;
    let mut t0 = first;
    while t0 < end {
        let a = class.amplitude * (1.0 + spec.amplitude_jitter * (2.0 * rng.random::<f64>() - 1.0));
        let start = (t0 * fs).ceil().max(0.0) as usize;
        for (i, xi) in x.iter_mut().enumerate().skip(start) {
            let dt = i as f64 / fs - t0;
            let env = (-class.decay_per_s * dt).exp();
            if env < 1e-6 {
                break;
            }
            *xi += a * env * (2.0 * std::f64::consts::PI * class.resonance_hz * dt).sin();
        }
        t0 += period;
    }
    for xi in x.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *xi += spec.noise_floor * z;
    }
    x.into_iter().map(|v| v as f32 as f64).collect()
}

/// Class-balanced synthetic dataset, ordered by class then segment index.
pub fn synth_generate(spec: &SynthSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut segments = Vec::with_capacity(spec.num_classes() * spec.segments_per_class);
    let mut labels = Vec::with_capacity(segments.capacity());
    for (k, class) in spec.classes.iter().enumerate() {
        for j in 0..spec.segments_per_class {
            let seed = derive_seed(derive_seed(spec.seed, k as u64), j as u64);
            let samples = generate_segment(spec, class, seed);
            segments.push(SignalSegment::new(samples, spec.sample_rate_hz, format!("synth/{k}/{j}"))?);
            labels.push(k);
        }
    }
    Ok(LabeledDataset {
        sample_rate_hz: spec.sample_rate_hz,
        classes: (0..spec.num_classes()).map(|k| format!("class{k}")).collect(),
        segments,
        labels,
        tags: None,
        provenance: Provenance::Synth { spec: spec.clone() },
        split_seed: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigproc::fft;

    #[test]
    fn silent_spec_gives_zero_segments() {
        let mut spec = SynthSpec::standard(3, 2, 1);
        for c in &mut spec.classes {
            c.amplitude = 0.0;
        }
        spec.classes[1].decay_per_s = 1.0;
        spec.classes[2].decay_per_s = 2.0;
        spec.noise_floor = 0.0;
        let ds = synth_generate(&spec).unwrap();
        assert!(ds.segments.iter().all(|s| s.samples.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn balanced_counts_and_determinism() {
        let spec = SynthSpec::standard(10, 64, 9);
        let a = synth_generate(&spec).unwrap();
        assert_eq!(a.len(), 640);
        for k in 0..10 {
            assert_eq!(a.labels.iter().filter(|&&l| l == k).count(), 64);
        }
        let b = synth_generate(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_rates_give_distinct_spectral_peaks() {
        let class = |rate| SynthClass {
            impulse_rate_hz: rate,
            resonance_hz: 3000.0,
            decay_per_s: 200.0,
            amplitude: 1.0,
        };
        let spec = SynthSpec {
            noise_floor: 0.0,
            amplitude_jitter: 0.0,
            classes: vec![class(30.0), class(90.0)],
            ..SynthSpec::standard(2, 4, 3)
        };
        let ds = synth_generate(&spec).unwrap();
        let peak = |label: usize| {
            let mut mag = vec![0.0; 1024];
            for (s, _) in ds.segments.iter().zip(&ds.labels).filter(|(_, &l)| l == label) {
                for (m, c) in mag.iter_mut().zip(fft(&s.samples).unwrap()) {
                    *m += c.norm();
                }
            }
            (1..1024).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap()
        };
        assert_ne!(peak(0), peak(1));
    }

    #[test]
    fn duplicate_classes_are_rejected() {
        let mut spec = SynthSpec::standard(3, 2, 0);
        spec.classes[2] = spec.classes[0];
        assert!(matches!(synth_generate(&spec), Err(Error::Config(_))));
    }
}
