use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    /// 0 when the class is never predicted.
    pub precision: f64,
    /// 0 when the class has no samples.
    pub recall: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub total: usize,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
    /// Mean cross-entropy, when logits were available.
    pub loss: Option<f64>,
}

/// Metrics from true labels and predicted labels over `k` classes.
pub fn evaluate_predictions(labels: &[usize], predicted: &[usize], k: usize) -> Result<Metrics> {
    if labels.len() != predicted.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels vs {} predictions",
            labels.len(),
            predicted.len()
        )));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in labels.iter().zip(predicted) {
        for l in [t, p] {
            if l >= k {
                return Err(Error::LabelOutOfRange { label: l, classes: k });
            }
        }
        confusion[t][p] += 1;
    }
    let total = labels.len();
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let per_class = (0..k)
        .map(|c| {
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
            let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
            ClassMetrics {
                precision: ratio(confusion[c][c], predicted),
                recall: ratio(confusion[c][c], support),
                support,
            }
        })
        .collect();
    Ok(Metrics {
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        total,
        per_class,
        confusion,
        loss: None,
    })
}

/// Metrics from row-major `(N, k)` logits, including mean cross-entropy.
pub fn metrics_from_logits(logits: &[f32], labels: &[usize], k: usize) -> Result<Metrics> {
    if logits.len() != labels.len() * k {
        return Err(Error::shape("metrics_from_logits", format!("{} logits for {} labels", logits.len(), labels.len())));
    }
    let mut predicted = Vec::with_capacity(labels.len());
    let mut loss = 0.0;
    for (row, &y) in logits.chunks(k.max(1)).zip(labels) {
        let (arg, &max) = row
            .iter()
            .enumerate()
            .fold((0, &f32::NEG_INFINITY), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
        predicted.push(arg);
        let lse = row.iter().map(|&v| ((v - max) as f64).exp()).sum::<f64>().ln() + max as f64;
        if y < k {
            loss += lse - row[y] as f64;
        }
    }
    let mut m = evaluate_predictions(labels, &predicted, k)?;
    if !labels.is_empty() {
        m.loss = Some(loss / labels.len() as f64);
    }
    Ok(m)
}
