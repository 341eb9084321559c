use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, Split};
use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, Result};

/// Train/val/test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = Self { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.as_array();
        if a.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::InvalidArgument(format!("split ratios {a:?} must be non-negative")));
        }
        if (a.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("split ratios {a:?} must sum to 1")));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` items; ties go to the earlier part.
/// Parts with a non-zero ratio then borrow from the largest part until each
/// holds at least one item, when `n` allows it.
fn apportion(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let quotas = ratios.map(|r| r * n as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let mut left = n - counts.iter().sum::<usize>().min(n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let (fa, fb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    let nonzero = ratios.iter().filter(|&&r| r > 0.0).count();
    if n >= nonzero {
        for i in 0..3 {
            if ratios[i] > 0.0 && counts[i] == 0 {
                let donor = (0..3).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).expect("three parts");
                counts[donor] -= 1;
                counts[i] += 1;
            }
        }
    }
    counts
}

/// Stratified split: within each class the segments are shuffled with a
/// seed derived from `(seed, class)` and cut in the stated proportions.
pub fn split(dataset: &LabeledDataset, ratios: SplitRatios, seed: u64) -> Result<LabeledDataset> {
    ratios.validate()?;
    let r = ratios.as_array();
    let parts = r.iter().filter(|&&x| x > 0.0).count();
    let mut tags = vec![Split::Train; dataset.len()];
    for class in 0..dataset.num_classes() {
        let mut idx: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == class).collect();
        if idx.len() < parts {
            return Err(Error::TooFewSegments {
                class,
                count: idx.len(),
                needed: parts,
            });
        }
        idx.shuffle(&mut rng_from_seed(derive_seed(seed, class as u64)));
        let counts = apportion(idx.len(), r);
        let mut it = idx.into_iter();
        for (s, &n) in Split::ALL.iter().zip(&counts) {
            for i in it.by_ref().take(n) {
                tags[i] = *s;
            }
        }
    }
    let mut out = dataset.clone();
    out.tags = Some(tags);
    out.split_seed = Some(seed);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHistogram {
    /// Segments per class.
    pub totals: Vec<usize>,
    /// Per class `[train, val, test]`; all zero for an untagged dataset.
    pub by_split: Vec<[usize; 3]>,
}

pub fn class_histogram(dataset: &LabeledDataset) -> ClassHistogram {
    let k = dataset.num_classes();
    let mut totals = vec![0; k];
    let mut by_split = vec![[0; 3]; k];
    for (i, &label) in dataset.labels.iter().enumerate() {
        totals[label] += 1;
        if let Some(tags) = &dataset.tags {
            by_split[label][tags[i].index()] += 1;
        }
    }
    ClassHistogram { totals, by_split }
}
