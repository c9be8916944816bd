use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use multisurv::cli::{
    cmd_evaluate, cmd_explain, cmd_synth, cmd_train, evaluate_samples, EvaluateConfig, ExplainConfig, SynthConfig,
    TrainRunConfig,
};
use multisurv::data::{load_cohort, read_volume, SignalSpec, Split};
use multisurv::network::{
    fit_clinical_normalization, fit_time_grid, load_checkpoint, prepare_samples, ConvSpec, EncoderConfig, Modality,
    SurvivalModel, TrainConfig,
};
use multisurv::survival::Label;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_multisurv"))
}

fn small_synth(n: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        patients: n,
        seed,
        signal: SignalSpec {
            extents: [10, 10, 10],
            ..SignalSpec::default()
        },
    }
}

fn small_train(manifest: &Path, seed: u64) -> TrainRunConfig {
    TrainRunConfig {
        manifest: manifest.to_path_buf(),
        encoder: EncoderConfig {
            conv: vec![
                ConvSpec { channels: 3, kernel: 3, stride: 2, padding: 1 },
                ConvSpec { channels: 4, kernel: 3, stride: 2, padding: 1 },
            ],
            fc_width: 6,
            volume_extents: [8, 8, 8],
            intervals: 6,
            ..EncoderConfig::default()
        },
        train: TrainConfig {
            learning_rate: 0.01,
            batch_size: 16,
            epochs: 2,
            ..TrainConfig::default()
        },
        seed,
        ..TrainRunConfig::default()
    }
}

fn small_eval(ckpt: &Path, manifest: &Path) -> EvaluateConfig {
    EvaluateConfig {
        checkpoint: ckpt.to_path_buf(),
        manifest: manifest.to_path_buf(),
        resamples: 50,
        ..EvaluateConfig::default()
    }
}

/// Synthetic cohort plus a two-epoch model, built once per test.
fn trained(dir: &Path) -> (PathBuf, PathBuf) {
    let manifest = cmd_synth(&small_synth(40, 3), &dir.join("data")).unwrap();
    let ckpt = cmd_train(&small_train(&manifest, 1), &dir.join("run")).unwrap();
    (manifest, ckpt)
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = cmd_synth(&small_synth(30, 7), &dir.path().join("a")).unwrap();
    let b = cmd_synth(&small_synth(30, 7), &dir.path().join("b")).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let loaded = load_cohort(&a).unwrap();
    assert_eq!(loaded.cohort.len(), 30);
    for name in ["clinical.csv", "ground_truth.json", "synth_config.json"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(name)).unwrap(),
            fs::read(dir.path().join("b").join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn binary_refuses_tiny_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.json");
    fs::write(&cfg, r#"{"patients": 5}"#).unwrap();
    let out = bin()
        .args(["synth", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("at least 10 patients"), "{err}");
    assert!(out.stdout.is_empty());
}

#[test]
fn binary_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.json");
    fs::write(&cfg, r#"{"train": {"learning_rat": 0.1}}"#).unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learning_rat"), "{err}");
}

#[test]
fn binary_runs_synth_with_seed_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.json");
    fs::write(&cfg, r#"{"patients": 12, "signal": {"extents": [6, 6, 6]}}"#).unwrap();
    let out = bin()
        .args(["synth", "--seed", "9", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let resolved: SynthConfig =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/synth_config.json")).unwrap()).unwrap();
    assert_eq!(resolved.seed, 9);
    assert_eq!(resolved.patients, 12);
}

#[test]
fn os_only_run_leaves_other_heads_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = cmd_synth(&small_synth(40, 3), &dir.path().join("data")).unwrap();
    let cfg = TrainRunConfig {
        labels: vec![Label::Os],
        ..small_train(&manifest, 2)
    };
    let model = load_checkpoint(&cmd_train(&cfg, &dir.path().join("run")).unwrap()).unwrap();
    for (name, p) in model.named_parameters() {
        if name.starts_with("head.") && !name.starts_with("head.os.") {
            assert!(p.value().data().iter().all(|&v| v == 0.0), "{name}");
        }
    }
    assert!(model.head(0).weights.iter().any(|&v| v != 0.0));
}

#[test]
fn clinical_only_run_ignores_the_image() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = cmd_synth(&small_synth(40, 3), &dir.path().join("data")).unwrap();
    let cfg = TrainRunConfig {
        modality: Modality::ClinicalOnly,
        ..small_train(&manifest, 2)
    };
    let model = load_checkpoint(&cmd_train(&cfg, &dir.path().join("run")).unwrap()).unwrap();
    assert_eq!(model.config().modality, Modality::ClinicalOnly);
    let loaded = load_cohort(&manifest).unwrap();
    let patients: Vec<_> = loaded.cohort.split(Split::Test);
    let samples = prepare_samples(&patients[..2], model.grid(), model.normalization().unwrap(), [8, 8, 8]).unwrap();
    let a = model.forward_pass(&samples[0].volume, &samples[0].clinical).unwrap().curves();
    let b = model.forward_pass(&samples[1].volume, &samples[0].clinical).unwrap().curves();
    assert_eq!(a, b);
}

#[test]
fn untrained_model_is_at_chance() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = cmd_synth(&small_synth(500, 4), &dir.path().join("data")).unwrap();
    let loaded = load_cohort(&manifest).unwrap();
    let all: Vec<_> = loaded.cohort.patients.iter().collect();
    let config = small_train(&manifest, 0).encoder;
    let grid = fit_time_grid(&all, config.intervals).unwrap();
    let stats = fit_clinical_normalization(&all).unwrap();
    let samples = prepare_samples(&all, &grid, &stats, config.volume_extents).unwrap();
    let model = SurvivalModel::new(config, grid).unwrap();
    let cfg = EvaluateConfig { resamples: 20, ..EvaluateConfig::default() };
    let report = evaluate_samples(&model, &samples, &cfg, None).unwrap();
    for l in &report.labels {
        let c = l.c_index.value().unwrap().estimate;
        assert!((c - 0.5).abs() < 0.07, "{}: {c}", l.label);
    }
}

#[test]
fn evaluate_report_schema_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, ckpt) = trained(dir.path());
    let cfg = small_eval(&ckpt, &manifest);
    let a = cmd_evaluate(&cfg, &dir.path().join("e1")).unwrap();
    let b = cmd_evaluate(&cfg, &dir.path().join("e2")).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&a).unwrap()).unwrap();
    let labels = report["labels"].as_array().unwrap();
    assert_eq!(labels.len(), 4);
    let mut entries = 0;
    for l in labels {
        let status = |v: &serde_json::Value| v["status"].as_str().unwrap().to_string();
        assert!(["ok", "undefined"].contains(&status(&l["c_index"]).as_str()));
        assert!(["ok", "undefined"].contains(&status(&l["log_rank"]).as_str()));
        entries += 2;
        let au = l["auroc"].as_array().unwrap();
        assert_eq!(au.len(), 3);
        for (e, h) in au.iter().zip([1.0, 2.0, 3.0]) {
            assert_eq!(e["horizon_years"].as_f64().unwrap(), h);
            assert!(["ok", "undefined"].contains(&status(&e["auroc"]).as_str()));
            entries += 1;
        }
        if status(&l["c_index"]) == "ok" {
            let c = &l["c_index"];
            assert!(c["lower"].as_f64().unwrap() <= c["upper"].as_f64().unwrap());
            assert_eq!(c["resamples"].as_u64().unwrap(), 50);
        }
        if status(&l["log_rank"]) == "ok" {
            let name = l["log_rank"]["km_csv"].as_str().unwrap();
            let csv = fs::read_to_string(dir.path().join("e1").join(name)).unwrap();
            assert!(csv.starts_with("time,survival,at_risk,events,group\n"));
        }
    }
    assert_eq!(entries, 4 * (1 + 3 + 1));
    assert_eq!(report["patients"].as_u64().unwrap(), 8);
}

#[test]
fn explain_maps_time_to_interval_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, ckpt) = trained(dir.path());
    let model = load_checkpoint(&ckpt).unwrap();
    let k = model.grid().interval_index(2.0).unwrap();
    let cfg = ExplainConfig {
        checkpoint: ckpt.clone(),
        manifest: manifest.clone(),
        patient: "p0035".into(),
        labels: Label::ALL.to_vec(),
        time_years: Some(2.0),
        ..ExplainConfig::default()
    };
    let written = cmd_explain(&cfg, &dir.path().join("x")).unwrap();
    assert_eq!(written.len(), 4);
    for (path, label) in written.iter().zip(Label::ALL) {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        assert_eq!(name, format!("map_p0035_{}_k{k}.json", label.name()));
        let pgm = path.with_file_name(format!("map_p0035_{}_k{k}_axial.pgm", label.name()));
        assert!(pgm.exists());
    }

    let both = ExplainConfig { interval: Some(1), ..cfg.clone() };
    assert!(cmd_explain(&both, &dir.path().join("y")).is_err());
    let neither = ExplainConfig { time_years: None, ..cfg.clone() };
    assert!(cmd_explain(&neither, &dir.path().join("y")).is_err());
    let negative = ExplainConfig { time_years: Some(-1.0), ..cfg.clone() };
    assert!(cmd_explain(&negative, &dir.path().join("y")).is_err());
    let stranger = ExplainConfig { patient: "nobody".into(), ..cfg };
    assert!(cmd_explain(&stranger, &dir.path().join("y")).is_err());
}

#[test]
fn explain_last_interval_exports_a_zero_map() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, ckpt) = trained(dir.path());
    let cfg = ExplainConfig {
        checkpoint: ckpt,
        manifest,
        patient: "p0001".into(),
        interval: Some(6),
        ..ExplainConfig::default()
    };
    let written = cmd_explain(&cfg, &dir.path().join("x")).unwrap();
    let (grid, _) = read_volume(&written[0]).unwrap();
    assert!(grid.data().iter().all(|&v| v == 0.0));
    let pgm = fs::read(dir.path().join("x/map_p0001_os_k6_axial.pgm")).unwrap();
    let header = b"P5\n8 8\n255\n";
    assert_eq!(pgm.len(), header.len() + 64);
    assert!(pgm[header.len()..].iter().all(|&b| b == 0));
}

#[test]
fn resolved_configs_reproduce_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = cmd_synth(&small_synth(40, 5), &d.join("data")).unwrap();
    let train_cfg = TrainRunConfig {
        train: TrainConfig { augment: true, ..small_train(&manifest, 8).train },
        ..small_train(&manifest, 8)
    };
    let ckpt = cmd_train(&train_cfg, &d.join("t1")).unwrap();
    let eval_cfg = small_eval(&ckpt, &manifest);
    cmd_evaluate(&eval_cfg, &d.join("e1")).unwrap();
    let explain_cfg = ExplainConfig {
        checkpoint: ckpt.clone(),
        manifest: manifest.clone(),
        patient: "p0002".into(),
        interval: Some(2),
        ..ExplainConfig::default()
    };
    cmd_explain(&explain_cfg, &d.join("x1")).unwrap();

    let read = |p: PathBuf| fs::read_to_string(p).unwrap();
    let train2: TrainRunConfig = serde_json::from_str(&read(d.join("t1/train_config.json"))).unwrap();
    let eval2: EvaluateConfig = serde_json::from_str(&read(d.join("e1/evaluate_config.json"))).unwrap();
    let explain2: ExplainConfig = serde_json::from_str(&read(d.join("x1/explain_config.json"))).unwrap();
    cmd_train(&train2, &d.join("t2")).unwrap();
    cmd_evaluate(&eval2, &d.join("e2")).unwrap();
    cmd_explain(&explain2, &d.join("x2")).unwrap();

    for (a, b) in [("t1", "t2"), ("e1", "e2"), ("x1", "x2")] {
        let mut names: Vec<_> = fs::read_dir(d.join(a)).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for n in names {
            assert_eq!(fs::read(d.join(a).join(&n)).unwrap(), fs::read(d.join(b).join(&n)).unwrap(), "{a}/{n:?}");
        }
    }
}
