use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rashvit_core::datasets::load_archive;
use rashvit_core::model::count_params;
use rashvit_core::ModelConfig;

fn rashvit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rashvit"))
        .args(args)
        .output()
        .expect("spawn rashvit")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, train: &str) -> PathBuf {
    let path = dir.join("run.config.json");
    let text = format!(
        r#"{{
  "model": {{"embed_dims": [32, 48, 64], "depths": [1, 1, 1], "num_classes": 3}},
  "train": {train},
  "dataset": {{"synth_standard": {{"classes": 3, "segments_per_class": 12, "seed": 4}}}},
  "out_dir": "run"
}}"#
    );
    std::fs::write(&path, text).unwrap();
    path
}

/// Trains a 2-epoch model into `<dir>/run`.
fn trained(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = write_config(dir, r#"{"epochs": 2, "seed": 3}"#);
    let o = rashvit(&["train", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    (cfg, dir.join("run"))
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn synth_is_loadable_and_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = rashvit(&["synth", "--classes", "4", "--per-class", "3", "--seed", "9", "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(files_in(&a), files_in(&b));
    let ds = load_archive(&a.join("manifest.json")).unwrap();
    assert_eq!((ds.len(), ds.num_classes()), (12, 4));
}

#[test]
fn malformed_synth_spec_names_the_bad_key() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"sample_rate_hz": 12000, "segments_per_class": 2, "noise_flor": 0.1, "seed": 0, "classes": []}"#,
    )
    .unwrap();
    let o = rashvit(&["synth", "--spec", s(&spec), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("noise_flor"), "{}", stderr(&o));
}

#[test]
fn ingest_text_signals() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["ingest".to_string()];
    for (k, name) in ["inner", "outer"].iter().enumerate() {
        let path = dir.path().join(format!("{name}.txt"));
        let text: Vec<String> = (0..600).map(|i| format!("{}", ((i * (k + 1)) as f64 * 0.1).sin())).collect();
        std::fs::write(&path, text.join("\n")).unwrap();
        args.extend(["--class".into(), format!("{name}={}", path.display())]);
    }
    let out = dir.path().join("archive");
    args.extend(
        ["--sample-rate", "12000", "--window", "256", "--stride", "128", "--out", s(&out)]
            .iter()
            .map(|a| a.to_string()),
    );
    let o = rashvit(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success(), "{}", stderr(&o));
    let ds = load_archive(&out.join("manifest.json")).unwrap();
    assert_eq!(ds.classes, vec!["inner", "outer"]);
    // (600 - 256) / 128 + 1 windows per file
    assert_eq!(ds.len(), 2 * 3);
}

#[test]
fn train_writes_artifacts_and_flat_marker() {
    let dir = tempfile::tempdir().unwrap();
    let (_, run) = trained(dir.path());
    for f in ["model.ckpt", "run.json", "timing.json", "test_confusion.svg", "epochs.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }

    let flat = write_config(dir.path(), r#"{"epochs": 1, "lr": 0.0, "weight_decay": 0.0}"#);
    let out = dir.path().join("flat");
    let o = rashvit(&["train", "--config", s(&flat), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("parameters unchanged"));
    let record: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(record["params_changed"], false);
}

#[test]
fn error_taxonomy_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    std::fs::write(
        &missing,
        r#"{"model": {"num_classes": 3}, "dataset": {"archive": {"path": "nowhere"}}, "out_dir": "o"}"#,
    )
    .unwrap();
    let o = rashvit(&["train", "--config", s(&missing)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let diverging = write_config(dir.path(), r#"{"epochs": 3, "lr": 1e30}"#);
    let o = rashvit(&["train", "--config", s(&diverging)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let o = rashvit(&["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));

    let o = Command::new(env!("CARGO_BIN_EXE_rashvit"))
        .args(["info"])
        .env("RA_SHVIT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_sweep_and_export_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, run) = trained(dir.path());
    let ckpt = run.join("model.ckpt");

    let ev = dir.path().join("eval");
    let o = rashvit(&["eval", "--checkpoint", s(&ckpt), "--config", s(&cfg), "--snr", "-2", "--out", s(&ev)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = std::fs::read_to_string(ev.join("confusion.svg")).unwrap();
    assert_eq!(svg.matches(r#"class="cell""#).count(), 9);
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(ev.join("metrics.json")).unwrap()).unwrap();
    let csv = std::fs::read_to_string(ev.join("metrics.csv")).unwrap();
    let acc: f64 = csv.lines().find(|l| l.starts_with("accuracy,")).unwrap()[9..].parse().unwrap();
    assert_eq!(acc, json["accuracy"].as_f64().unwrap());
    let per_class = std::fs::read_to_string(ev.join("per_class.csv")).unwrap();
    for (k, line) in per_class.lines().skip(1).enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[2].parse::<f64>().unwrap(), json["per_class"][k]["precision"].as_f64().unwrap());
        assert_eq!(cols[3].parse::<f64>().unwrap(), json["per_class"][k]["recall"].as_f64().unwrap());
    }

    let sw = dir.path().join("sweep");
    let o = rashvit(&[
        "sweep", "--checkpoint", s(&ckpt), "--config", s(&cfg), "--snrs", "-10:2:10", "--seeds", "1,2", "--out", s(&sw),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let points = std::fs::read_to_string(sw.join("sweep.csv")).unwrap();
    assert_eq!(points.lines().count(), 1 + 11);
    let cells = std::fs::read_to_string(sw.join("sweep_cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 1 + 22);
    let svg = std::fs::read_to_string(sw.join("sweep.svg")).unwrap();
    assert!(svg.starts_with("<svg xmlns=\"http://www.w3.org/2000/svg\""));
    assert!(svg.contains("<polyline"));

    let features = dir.path().join("features.csv");
    let o = rashvit(&["export", "--checkpoint", s(&ckpt), "--config", s(&cfg), "--out", s(&features)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&features).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 64 + 1);
    // 12 per class at 0.7/0.1/0.2 apportions to 8/1/3
    assert_eq!(text.lines().count(), 1 + 3 * 3);

    let again = dir.path().join("eval2");
    rashvit(&["eval", "--checkpoint", s(&ckpt), "--config", s(&cfg), "--snr", "-2", "--out", s(&again)]);
    assert_eq!(files_in(&ev), files_in(&again));
}

#[test]
fn ablate_writes_a_row_per_arm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"epochs": 1}"#);
    let out = dir.path().join("abl");
    let o = rashvit(&[
        "ablate", "--config", s(&cfg), "--snrs", "-6,inf", "--seeds", "1", "--variants", "ahab=off,features=raw",
        "--protocol", "shared", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    assert!(csv.contains("\nahab=off,inf,"));
    let o = rashvit(&["ablate", "--config", s(&cfg), "--variants", "ahab=on", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_passes_and_a_corrupted_rule_is_named() {
    let o = rashvit(&["gradcheck"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    for op in ["conv2d", "batch_norm_train", "softmax", "sigmoid", "shsa", "ahab", "res_ffn", "full_tiny_model"] {
        let line = out.lines().find(|l| l.starts_with(op)).unwrap_or_else(|| panic!("{op} missing"));
        assert!(line.contains("e-"), "{line}");
        assert!(line.ends_with("PASS"));
    }

    let o = rashvit(&["gradcheck", "--inject-fault", "--json"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("failing: corrupted_square"));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let bad: Vec<&str> = report
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["passed"] == false)
        .map(|r| r["name"].as_str().unwrap())
        .collect();
    assert_eq!(bad, vec!["corrupted_square"]);
}

#[test]
fn info_counts_and_reference_comparison() {
    let o = rashvit(&["info", "--preset", "tiny", "--json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["params"].as_u64().unwrap() as usize, count_params(&ModelConfig::tiny(10)));

    let a = rashvit(&["info"]);
    let b = rashvit(&["info"]);
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert!(text.contains("19.46 M params, 6.01 M FLOPs"));
    assert!(text.contains(&format!("parameters: {}", count_params(&ModelConfig::default()))));
}

#[test]
fn shipped_configs_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        let o = rashvit(&["info", "--config", s(&path)]);
        assert!(o.status.success(), "{}: {}", path.display(), stderr(&o));
        n += 1;
    }
    assert!(n >= 3);
}
