use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{run_eval, Prepared};
use super::eval::{check_classes, split_indices};
use super::metrics::metrics_from_logits;
use crate::datasets::{LabeledDataset, Split};
use crate::model::Checkpoint;
use crate::rng::derive_seed;
use crate::sigproc::FeatureMode;
use crate::{Error, Result};

/// SNR value meaning "no noise injected".
pub const CLEAN: f64 = f64::INFINITY;

/// Serializes infinite SNRs as the string `"inf"`.
pub mod snr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad SNR {t:?}"))),
        }
    }
}

pub fn format_snr(snr: f64) -> String {
    if snr.is_infinite() {
        "inf".into()
    } else {
        format!("{snr}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    #[serde(with = "snr_serde")]
    pub snr_db: f64,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    #[serde(with = "snr_serde")]
    pub snr_db: f64,
    pub mean_accuracy: f64,
    /// Population standard deviation across seeds.
    pub std_accuracy: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    /// Row-major over (snr, seed).
    pub cells: Vec<SweepCell>,
    pub points: Vec<SweepPoint>,
}

pub(crate) fn summarize(snrs: &[f64], cells: &[SweepCell]) -> Vec<SweepPoint> {
    snrs.iter()
        .map(|&snr| {
            let accs: Vec<f64> = cells
                .iter()
                .filter(|c| c.snr_db == snr || (c.snr_db.is_nan() && snr.is_nan()))
                .map(|c| c.accuracy)
                .collect();
            let n = accs.len().max(1) as f64;
            let mean = accs.iter().sum::<f64>() / n;
            let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
            SweepPoint {
                snr_db: snr,
                mean_accuracy: mean,
                std_accuracy: var.sqrt(),
                runs: accs.len(),
            }
        })
        .collect()
}

impl SweepTable {
    pub fn from_cells(snrs: &[f64], cells: Vec<SweepCell>) -> Self {
        let points = summarize(snrs, &cells);
        Self { cells, points }
    }

    pub fn cells_csv(&self) -> String {
        let mut s = String::from("snr_db,seed,accuracy\n");
        for c in &self.cells {
            s.push_str(&format!("{},{},{}\n", format_snr(c.snr_db), c.seed, c.accuracy));
        }
        s
    }

    pub fn points_csv(&self) -> String {
        let mut s = String::from("snr_db,mean_accuracy,std_accuracy,runs\n");
        for p in &self.points {
            s.push_str(&format!(
                "{},{},{},{}\n",
                format_snr(p.snr_db),
                p.mean_accuracy,
                p.std_accuracy,
                p.runs
            ));
        }
        s
    }
}

/// Inclusive grid `lo, lo+step, ..., hi`.
pub fn snr_grid(lo: f64, step: f64, hi: f64) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite() && step.is_finite()) || step <= 0.0 || hi < lo {
        return Err(Error::InvalidArgument(format!("bad SNR grid {lo}:{step}:{hi}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + step * i as f64).collect())
}

/// Parses `a:step:b` (inclusive) or a comma-separated list; `inf` is the clean sentinel.
pub fn parse_snr_list(text: &str) -> Result<Vec<f64>> {
    let parse = |t: &str| -> Result<f64> {
        let t = t.trim();
        if t == "inf" {
            return Ok(CLEAN);
        }
        t.parse::<f64>()
            .map_err(|_| Error::InvalidArgument(format!("bad SNR value {t:?}")))
    };
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [a, step, b] => snr_grid(parse(a)?, parse(step)?, parse(b)?),
        [_] => text.split(',').map(parse).collect(),
        _ => Err(Error::InvalidArgument(format!("SNR grid {text:?} must be a:step:b"))),
    }
}

/// One evaluation per (snr, seed) cell; noise for cell `(s, seed)` derives from `seed`.
pub fn snr_sweep(
    checkpoint: &Checkpoint,
    dataset: &LabeledDataset,
    split: Option<Split>,
    snrs: &[f64],
    seeds: &[u64],
    mode: FeatureMode,
) -> Result<SweepTable> {
    check_classes(checkpoint, dataset)?;
    let idx = split_indices(dataset, split)?;
    let data = Prepared::new(dataset, &idx, mode);
    let grid: Vec<(f64, u64)> = snrs.iter().flat_map(|&s| seeds.iter().map(move |&seed| (s, seed))).collect();
    let cells = grid
        .par_iter()
        .map(|&(snr, seed)| {
            let out = run_eval(
                &checkpoint.config,
                &checkpoint.params,
                &data,
                Some(snr),
                derive_seed(seed, 0x5_77EE),
            )?;
            let m = metrics_from_logits(&out.logits, &data.labels, checkpoint.config.num_classes)?;
            Ok(SweepCell {
                snr_db: snr,
                seed,
                accuracy: m.accuracy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable::from_cells(snrs, cells))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_inclusive() {
        let g = parse_snr_list("-10:2:10").unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!((g[0], g[10]), (-10.0, 10.0));
        assert_eq!(parse_snr_list("-4:1:4").unwrap().len(), 9);
        assert_eq!(parse_snr_list("inf,0,-6").unwrap(), vec![CLEAN, 0.0, -6.0]);
        assert!(parse_snr_list("1:0:3").is_err());
        assert!(parse_snr_list("1:2").is_err());
    }

    #[test]
    fn infinite_snr_json_round_trip() {
        let c = SweepCell {
            snr_db: CLEAN,
            seed: 1,
            accuracy: 0.5,
        };
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"inf\""));
        assert_eq!(serde_json::from_str::<SweepCell>(&s).unwrap(), c);
    }

    #[test]
    fn summary_statistics() {
        let cells = vec![
            SweepCell { snr_db: 0.0, seed: 0, accuracy: 0.5 },
            SweepCell { snr_db: 0.0, seed: 1, accuracy: 0.7 },
            SweepCell { snr_db: 2.0, seed: 0, accuracy: 1.0 },
        ];
        let t = SweepTable::from_cells(&[0.0, 2.0], cells);
        assert!((t.points[0].mean_accuracy - 0.6).abs() < 1e-15);
        assert!((t.points[0].std_accuracy - 0.1).abs() < 1e-15);
        assert_eq!(t.points[1].runs, 1);
    }
}
