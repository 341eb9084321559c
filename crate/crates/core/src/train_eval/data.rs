use crate::datasets::LabeledDataset;
use crate::diffcore::{Real, Tape, Tensor};
use crate::model::{forward, Mode, ModelConfig, ModelParams, Session};
use crate::rng::derive_seed;
use crate::sigproc::{featurize_with, inject_noise, normalize, FeatureMode, NoiseSpec, SignalSegment};
use crate::Result;

/// Stream indices mixed into the run seed with [`derive_seed`].
pub(crate) mod stream {
    pub const INIT: u64 = 1;
    pub const ORDER: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const TRAIN_NOISE: u64 = 4;
    pub const EVAL_NOISE: u64 = 5;
}

/// Normalized segments of one split, featurized on demand.
pub struct Prepared {
    pub segments: Vec<SignalSegment>,
    pub labels: Vec<usize>,
    /// Index of each segment in the source dataset; noise seeds derive from it.
    pub source_index: Vec<usize>,
    pub mode: FeatureMode,
}

impl Prepared {
    pub fn new(dataset: &LabeledDataset, indices: &[usize], mode: FeatureMode) -> Self {
        Self {
            segments: indices.iter().map(|&i| normalize(&dataset.segments[i])).collect(),
            labels: indices.iter().map(|&i| dataset.labels[i]).collect(),
            source_index: indices.to_vec(),
            mode,
        }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// `(2, 64, 32)` image of item `i`, with noise at `snr_db` when given.
    pub fn image(&self, i: usize, noise: Option<NoiseSpec>) -> Result<Tensor<f64>> {
        let seg = match noise {
            Some(spec) => inject_noise(&self.segments[i], &spec)?,
            None => self.segments[i].clone(),
        };
        Ok(featurize_with(&seg, self.mode)?.data)
    }

    /// Stacks items into `(B, 2, 64, 32)`.
    pub fn batch<T: Real>(
        &self,
        items: &[usize],
        noise: impl Fn(usize) -> Option<NoiseSpec>,
    ) -> Result<Tensor<T>> {
        let images: Vec<Tensor<f64>> = items
            .iter()
            .map(|&i| self.image(i, noise(i)))
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor<f64>> = images.iter().collect();
        crate::model::forward::stack_images(&refs)
    }

    /// Noise spec for evaluation item `i` at `snr_db` (`None` or infinite is clean).
    pub fn eval_noise(&self, i: usize, snr_db: Option<f64>, seed: u64) -> Option<NoiseSpec> {
        let snr = snr_db.filter(|s| s.is_finite())?;
        Some(NoiseSpec {
            snr_db: snr,
            seed: derive_seed(seed, self.source_index[i] as u64),
        })
    }
}

/// Eval-mode logits and classifier-input features, row-major.
pub struct EvalOutput {
    pub logits: Vec<f32>,
    pub features: Vec<f32>,
    pub num_classes: usize,
    pub feature_width: usize,
}

pub const EVAL_BATCH: usize = 64;

pub fn run_eval(
    config: &ModelConfig,
    params: &ModelParams<f32>,
    data: &Prepared,
    snr_db: Option<f64>,
    noise_seed: u64,
) -> Result<EvalOutput> {
    let mut out = EvalOutput {
        logits: Vec::with_capacity(data.len() * config.num_classes),
        features: Vec::new(),
        num_classes: config.num_classes,
        feature_width: 0,
    };
    let items: Vec<usize> = (0..data.len()).collect();
    for chunk in items.chunks(EVAL_BATCH) {
        let x = data.batch::<f32>(chunk, |i| data.eval_noise(i, snr_db, noise_seed))?;
        let tape = Tape::new();
        let session = Session::new(&tape, config, params, Mode::Eval, 0, false)?;
        let fwd = forward(&session, tape.constant(x))?;
        out.logits.extend_from_slice(fwd.logits.value().data());
        let f = fwd.features.value();
        out.feature_width = f.shape()[1];
        out.features.extend_from_slice(f.data());
    }
    Ok(out)
}
