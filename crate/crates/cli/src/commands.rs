use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rashvit_core::datasets::{
    class_histogram, load_archive, save_archive, synth_generate, LabeledDataset, Manifest, ManifestEntry, SynthSpec,
    MANIFEST_FILE,
};
use rashvit_core::io::write_atomic;
use rashvit_core::model::{load_checkpoint, Architecture, Checkpoint};
use rashvit_core::sigproc::FeatureMode;
use rashvit_core::train_eval::{
    ablate as run_ablation, evaluate, export_features, format_snr, parse_snr_list, snr_sweep, train_to_dir,
    FfnKind, Protocol, RunRecord, Variant,
};
use rashvit_core::verify::{corrupted_fixture, registry, run_checks};
use rashvit_core::{Error, ModelConfig};
use serde::Serialize;

use crate::config::{check_model_matches, load_run_config, manifest_path, read_json, sibling_record, tag_like_training};
use crate::plot::{accuracy_svg, Series};
use crate::report::{write_json, write_metrics, write_text};
use crate::{
    AblateArgs, DataArgs, EvalArgs, ExportArgs, GradcheckArgs, InfoArgs, IngestArgs, InputFormat, PresetArg,
    ProtocolArg, SweepArgs, SynthArgs, TrainArgs, EXIT_NUMERIC, EXIT_OK,
};

const REFERENCE_PARAMS_M: f64 = 19.46;
const REFERENCE_FLOPS_M: f64 = 6.01;

pub fn synth(a: SynthArgs) -> Result<i32> {
    let mut spec = match &a.spec {
        Some(path) => read_json::<SynthSpec>(path)?,
        None => SynthSpec::standard(a.classes, a.per_class, 0),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let ds = synth_generate(&spec)?;
    let manifest = save_archive(&ds, &a.out)?;
    write_json(&a.out.join("synth_spec.json"), &spec)?;
    println!(
        "wrote {} segments in {} classes to {}",
        ds.len(),
        ds.num_classes(),
        manifest.display()
    );
    Ok(EXIT_OK)
}

fn read_signal(path: &Path, format: InputFormat) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    match format {
        InputFormat::F32le => {
            if bytes.len() % 4 != 0 {
                bail!(Error::Format(format!(
                    "{} has {} bytes, not a whole number of f32 samples",
                    path.display(),
                    bytes.len()
                )));
            }
            Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
        }
        InputFormat::Text => {
            let text = String::from_utf8(bytes).map_err(|_| Error::Format(format!("{} is not UTF-8", path.display())))?;
            text.split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f32>()
                        .map_err(|_| Error::Format(format!("{}: `{t}` is not a number", path.display())).into())
                })
                .collect()
        }
    }
}

pub fn ingest(a: IngestArgs) -> Result<i32> {
    let mut classes: Vec<String> = Vec::new();
    let mut entries = Vec::new();
    std::fs::create_dir_all(&a.out)?;
    for (i, spec) in a.classes.iter().enumerate() {
        let (name, file) = spec
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("--class expects NAME=FILE, got `{spec}`")))?;
        let label = match classes.iter().position(|c| c == name) {
            Some(l) => l,
            None => {
                classes.push(name.to_string());
                classes.len() - 1
            }
        };
        let samples = read_signal(Path::new(file), a.format)?;
        let bytes: Vec<u8> = samples.iter().flat_map(|v| v.to_le_bytes()).collect();
        let data = format!("signal_{i}.f32");
        write_atomic(&a.out.join(&data), &bytes)?;
        entries.push(ManifestEntry {
            path: data,
            offset: 0,
            samples: samples.len(),
            label,
        });
    }
    let manifest = Manifest {
        sample_rate_hz: a.sample_rate,
        window: a.window,
        stride: a.stride.unwrap_or(a.window),
        classes,
        entries,
    };
    manifest.validate()?;
    let path = a.out.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    let ds = load_archive(&path)?;
    let hist = class_histogram(&ds);
    println!("wrote {} ({} segments)", path.display(), ds.len());
    for (name, n) in ds.classes.iter().zip(&hist.totals) {
        println!("  {name}: {n}");
    }
    Ok(EXIT_OK)
}

pub fn train(a: TrainArgs) -> Result<i32> {
    let cfg = load_run_config(&a.config)?;
    let mut train_cfg = cfg.file.train.clone();
    if let Some(e) = a.epochs {
        train_cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        train_cfg.seed = s;
    }
    train_cfg.validate()?;
    let out = a.out.clone().unwrap_or_else(|| cfg.out_dir());
    let ds = cfg.dataset()?;
    let outcome = train_to_dir(&ds, &cfg.file.model, &train_cfg, &out)?;
    let r = &outcome.record;
    write_metrics(&out, "test_", "test confusion", &r.test_metrics, &ds.classes)?;
    write_text(&out.join("epochs.csv"), &epochs_csv(r))?;
    let val = r.best_val_accuracy.map_or_else(|| "no validation split".into(), |v| format!("val {v:.4}"));
    println!(
        "trained {} epochs in {:.1}s; kept epoch {} ({val})",
        r.epochs.len(),
        outcome.wall_clock_s,
        r.best_epoch,
    );
    println!(
        "train accuracy {:.4}, test accuracy {:.4}",
        r.train_metrics.accuracy, r.test_metrics.accuracy
    );
    if !r.params_changed {
        println!("parameters unchanged: every learnable tensor equals its initial value");
    }
    println!("artifacts in {}", out.display());
    Ok(EXIT_OK)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn epochs_csv(r: &RunRecord) -> String {
    let mut s = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n");
    for e in &r.epochs {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch,
            e.train_loss,
            e.train_accuracy,
            opt(e.val_loss),
            opt(e.val_accuracy)
        ));
    }
    s
}

struct Loaded {
    checkpoint: Checkpoint,
    dataset: LabeledDataset,
    features: FeatureMode,
}

fn load_for_checkpoint(d: &DataArgs) -> Result<Loaded> {
    let checkpoint = load_checkpoint(&d.checkpoint)?;
    let dataset = match (&d.data, &d.config) {
        (Some(path), _) => load_archive(&manifest_path(path))?,
        (None, Some(cfg)) => load_run_config(cfg)?.dataset()?,
        (None, None) => bail!(Error::InvalidArgument("pass --data or --config".into())),
    };
    check_model_matches(&checkpoint, &dataset)?;
    let record = sibling_record(&d.checkpoint)?;
    let dataset = tag_like_training(dataset, record.as_ref(), d.split_seed)?;
    let features = d
        .features
        .map(FeatureMode::from)
        .or(record.as_ref().map(|r| r.train.feature_mode))
        .unwrap_or_default();
    Ok(Loaded {
        checkpoint,
        dataset,
        features,
    })
}

fn parse_snr(text: &str) -> Result<Option<f64>> {
    let v = parse_snr_list(text)?;
    match v.as_slice() {
        [s] if s.is_infinite() => Ok(None),
        [s] => Ok(Some(*s)),
        _ => bail!(Error::InvalidArgument(format!("--snr takes one value, got `{text}`"))),
    }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<u64>()
                .map_err(|_| Error::InvalidArgument(format!("`{t}` is not a seed")).into())
        })
        .collect()
}

pub fn eval(a: EvalArgs) -> Result<i32> {
    let l = load_for_checkpoint(&a.data)?;
    let snr = parse_snr(&a.snr)?;
    let m = evaluate(&l.checkpoint, &l.dataset, a.data.split.split(), snr, a.seed, l.features)?;
    let snr_label = snr.map_or("clean".to_string(), |s| format!("{s} dB"));
    write_metrics(
        &a.out,
        "",
        &format!("confusion at {snr_label}"),
        &m,
        &l.dataset.classes,
    )?;
    println!("accuracy {:.4} on {} segments at {snr_label}", m.accuracy, m.total);
    Ok(EXIT_OK)
}

pub fn sweep(a: SweepArgs) -> Result<i32> {
    let l = load_for_checkpoint(&a.data)?;
    let snrs = parse_snr_list(&a.snrs)?;
    let seeds = parse_seeds(&a.seeds)?;
    let table = snr_sweep(&l.checkpoint, &l.dataset, a.data.split.split(), &snrs, &seeds, l.features)?;
    std::fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("sweep.json"), &table)?;
    write_text(&a.out.join("sweep_cells.csv"), &table.cells_csv())?;
    write_text(&a.out.join("sweep.csv"), &table.points_csv())?;
    let series = Series {
        name: "mean accuracy".into(),
        points: table.points.iter().map(|p| (p.snr_db, p.mean_accuracy)).collect(),
    };
    write_text(&a.out.join("sweep.svg"), &accuracy_svg("accuracy vs SNR", &[series]))?;
    for p in &table.points {
        println!(
            "{:>6} dB  {:.4} ± {:.4}",
            format_snr(p.snr_db),
            p.mean_accuracy,
            p.std_accuracy
        );
    }
    Ok(EXIT_OK)
}

fn parse_variant(text: &str) -> Result<Variant> {
    let (axis, value) = text
        .split_once('=')
        .ok_or_else(|| Error::InvalidArgument(format!("variant `{text}` is not axis=value")))?;
    let bad = || Error::InvalidArgument(format!("unknown variant `{text}`"));
    Ok(match (axis.trim(), value.trim()) {
        ("ahab", "on") => Variant::ahab(true),
        ("ahab", "off") => Variant::ahab(false),
        ("ffn", "res") => Variant::ffn(FfnKind::Res),
        ("ffn", "plain") => Variant::ffn(FfnKind::Plain),
        ("features", "fft") => Variant::features(FeatureMode::Fft),
        ("features", "raw") => Variant::features(FeatureMode::Raw),
        _ => bail!(bad()),
    })
}

pub fn ablate(a: AblateArgs) -> Result<i32> {
    let cfg = load_run_config(&a.config)?;
    let mut train_cfg = cfg.file.train.clone();
    if let Some(e) = a.epochs {
        train_cfg.epochs = e;
    }
    let variants: Vec<Variant> = a
        .variants
        .split(',')
        .filter(|v| !v.trim().is_empty())
        .map(parse_variant)
        .collect::<Result<_>>()?;
    let snrs = parse_snr_list(&a.snrs)?;
    let seeds = parse_seeds(&a.seeds)?;
    let protocol = match a.protocol {
        ProtocolArg::PerSnr => Protocol::PerSnr,
        ProtocolArg::Shared => Protocol::Shared,
    };
    let ds = cfg.dataset()?;
    let table = run_ablation(&ds, &cfg.file.model, &train_cfg, &variants, &snrs, &seeds, protocol)?;
    let out = a.out.clone().unwrap_or_else(|| cfg.out_dir().join("ablation"));
    std::fs::create_dir_all(&out)?;
    write_json(&out.join("ablation.json"), &table)?;
    write_text(&out.join("ablation.csv"), &table.to_csv())?;
    let series: Vec<Series> = table
        .rows
        .iter()
        .map(|r| Series {
            name: r.name.clone(),
            points: r.points.iter().map(|p| (p.snr_db, p.mean_accuracy)).collect(),
        })
        .collect();
    write_text(&out.join("ablation.svg"), &accuracy_svg("ablation: accuracy vs SNR", &series))?;
    for r in &table.rows {
        let cells: Vec<String> = r
            .points
            .iter()
            .zip(&r.delta_vs_base)
            .map(|(p, d)| format!("{} dB {:.4} ({d:+.4})", format_snr(p.snr_db), p.mean_accuracy))
            .collect();
        println!("{:<16} {:>9} params  {}", r.name, r.param_count, cells.join("  "));
    }
    println!("tables in {}", out.display());
    Ok(EXIT_OK)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<i32> {
    let mut checks = registry();
    if a.inject_fault {
        checks.push(corrupted_fixture());
    }
    let results = run_checks(&checks);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&results)?);
    } else {
        println!("{:<20} {:>14} {:>10} {:>8}  result", "check", "max rel error", "threshold", "coords");
        for r in &results {
            let err = r.max_rel_error.map_or_else(|| "error".to_string(), |e| format!("{e:.3e}"));
            println!(
                "{:<20} {:>14} {:>10.0e} {:>8}  {}",
                r.name,
                err,
                r.threshold,
                r.coords_checked,
                if r.passed { "PASS" } else { "FAIL" }
            );
        }
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
    if failed.is_empty() {
        return Ok(EXIT_OK);
    }
    for r in failed {
        let detail = match (&r.error, r.max_rel_error) {
            (Some(e), _) => e.clone(),
            (None, Some(e)) => format!("max rel error {e:.3e} >= {:.0e}", r.threshold),
            (None, None) => "no result".into(),
        };
        eprintln!("failing: {} ({detail})", r.name);
    }
    Ok(EXIT_NUMERIC)
}

pub fn export(a: ExportArgs) -> Result<i32> {
    let l = load_for_checkpoint(&a.data)?;
    let table = export_features(&l.checkpoint, &l.dataset, a.data.split.split(), l.features)?;
    write_text(&a.out, &table.to_csv())?;
    println!("wrote {} rows of width {} to {}", table.rows.len(), table.width, a.out.display());
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct InfoReport<'a> {
    model: &'a ModelConfig,
    params: usize,
    macs: u64,
    feature_width: usize,
    reference_params_m: f64,
    reference_flops_m: f64,
    layers: &'a [rashvit_core::model::LayerInfo],
    parameters: BTreeMap<String, Vec<usize>>,
}

pub fn info(a: InfoArgs) -> Result<i32> {
    let model = match &a.config {
        Some(path) => load_run_config(path)?.file.model,
        None => match a.preset {
            PresetArg::Default | PresetArg::Cwru => ModelConfig::cwru(),
            PresetArg::Pu => ModelConfig::pu(),
            PresetArg::Tiny => ModelConfig::tiny(10),
        },
    };
    model.validate()?;
    let arch = Architecture::of(&model);
    let params = arch.param_count();
    let macs = arch.macs();
    if a.json {
        let report = InfoReport {
            model: &model,
            params,
            macs,
            feature_width: arch.feature_width,
            reference_params_m: REFERENCE_PARAMS_M,
            reference_flops_m: REFERENCE_FLOPS_M,
            layers: &arch.layers,
            parameters: arch
                .params
                .iter()
                .filter(|p| !p.buffer)
                .map(|p| (p.name.clone(), p.shape.clone()))
                .collect(),
        };
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(EXIT_OK);
    }
    println!(
        "embed dims {:?}, depths {:?}, {} classes, input {}x{}x{}",
        model.embed_dims, model.depths, model.num_classes, model.in_channels, model.input_hw[0], model.input_hw[1]
    );
    println!("parameters: {params} ({:.3} M)", params as f64 / 1e6);
    println!("multiply-accumulates per sample: {macs} ({:.3} M)", macs as f64 / 1e6);
    println!(
        "reference full model: {REFERENCE_PARAMS_M} M params, {REFERENCE_FLOPS_M} M FLOPs. Its stage depths are not \
         stated; these counts use depths {:?}, so the totals are not expected to match.",
        model.depths
    );
    println!();
    println!("{:<36} {:<10} {:>16} {:>10} {:>12}", "layer", "kind", "output (C,H,W)", "params", "MACs");
    for l in &arch.layers {
        println!(
            "{:<36} {:<10} {:>16} {:>10} {:>12}",
            l.name,
            l.kind,
            format!("{:?}", l.out_shape),
            l.params,
            l.macs
        );
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_flags() {
        assert_eq!(parse_variant("ahab=off").unwrap(), Variant::ahab(false));
        assert_eq!(parse_variant(" features = raw ").unwrap(), Variant::features(FeatureMode::Raw));
        assert!(parse_variant("shsa=off").is_err());
        assert!(parse_variant("ahab").is_err());
    }

    #[test]
    fn snr_and_seed_flags() {
        assert_eq!(parse_snr("inf").unwrap(), None);
        assert_eq!(parse_snr("-6").unwrap(), Some(-6.0));
        assert!(parse_snr("-6,0").is_err());
        assert_eq!(parse_seeds("1, 2,3").unwrap(), vec![1, 2, 3]);
        assert!(parse_seeds("x").is_err());
    }
}
