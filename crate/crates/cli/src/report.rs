//! CSV renderings. Floats use Rust's shortest round-trip formatting, the same
//! digits `serde_json` writes, so CSV and JSON values compare exactly.

use std::path::Path;

use anyhow::Result;
use rashvit_core::io::write_atomic;
use rashvit_core::train_eval::Metrics;
use serde::Serialize;

use crate::plot::confusion_svg;

pub fn metrics_csv(m: &Metrics) -> String {
    let mut s = String::from("metric,value\n");
    s.push_str(&format!("accuracy,{}\n", m.accuracy));
    s.push_str(&format!("total,{}\n", m.total));
    if let Some(loss) = m.loss {
        s.push_str(&format!("loss,{loss}\n"));
    }
    s
}

pub fn per_class_csv(m: &Metrics, classes: &[String]) -> String {
    let mut s = String::from("label,class,precision,recall,support\n");
    for (k, c) in m.per_class.iter().enumerate() {
        let name = classes.get(k).map_or("", String::as_str);
        s.push_str(&format!("{k},{name},{},{},{}\n", c.precision, c.recall, c.support));
    }
    s
}

pub fn confusion_csv(m: &Metrics) -> String {
    let k = m.confusion.len();
    let mut s = String::from("true");
    for j in 0..k {
        s.push_str(&format!(",pred{j}"));
    }
    s.push('\n');
    for (i, row) in m.confusion.iter().enumerate() {
        s.push_str(&i.to_string());
        for c in row {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
    }
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// `metrics.json`, `metrics.csv`, `per_class.csv`, `confusion.csv` and
/// `confusion.svg` under `dir`, with file names prefixed by `prefix`.
pub fn write_metrics(dir: &Path, prefix: &str, title: &str, m: &Metrics, classes: &[String]) -> Result<()> {
    write_json(&dir.join(format!("{prefix}metrics.json")), m)?;
    write_text(&dir.join(format!("{prefix}metrics.csv")), &metrics_csv(m))?;
    write_text(&dir.join(format!("{prefix}per_class.csv")), &per_class_csv(m, classes))?;
    write_text(&dir.join(format!("{prefix}confusion.csv")), &confusion_csv(m))?;
    write_text(
        &dir.join(format!("{prefix}confusion.svg")),
        &confusion_svg(title, &m.confusion, classes),
    )?;
    Ok(())
}
