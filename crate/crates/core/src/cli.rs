//! Batch commands: `synth`, `train`, `evaluate`, `explain`.
//!
//! Each command reads an optional JSON config (unknown keys are rejected),
//! applies `--seed`, writes its resolved config into the output directory
//! and then its artifacts. Re-running from the resolved config reproduces
//! the outputs byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{load_cohort, write_cohort, Patient, SignalSpec, Split};
use crate::error::{Error, Result};
use crate::gradteam::{activation_map, export_map, GuidanceVector, ScoreMode};
use crate::metrics::{
    auroc_at_horizon, bootstrap_ci, concordance_index, kaplan_meier, log_rank, median, median_split_indices,
    write_km_csv, BootstrapCi, Observed,
};
use crate::mtlr::risk_score;
use crate::network::{
    fit_clinical_normalization, fit_time_grid, load_checkpoint, prepare_samples, save_checkpoint, train,
    EncoderConfig, Modality, Sample, SurvivalModel, TrainConfig,
};
use crate::survival::Label;

#[derive(Debug, Parser)]
#[command(name = "multisurv", about = "Multi-label survival prediction from CT and clinical data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// JSON config file; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort with known hazards.
    Synth(CommonArgs),
    /// Train a model and write the best checkpoint and loss log.
    Train(CommonArgs),
    /// Compute the metrics report and Kaplan–Meier curves.
    Evaluate(CommonArgs),
    /// Write time-event activation maps for one patient.
    Explain(CommonArgs),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub patients: usize,
    pub seed: u64,
    pub signal: SignalSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            patients: 200,
            seed: 0,
            signal: SignalSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub manifest: PathBuf,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    /// Labels whose likelihood enters the loss; the others keep λ = 0.
    pub labels: Vec<Label>,
    pub modality: Modality,
    /// Seeds both initialization and training.
    pub seed: u64,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.json"),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            labels: Label::ALL.to_vec(),
            modality: Modality::Multimodal,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub split: Split,
    pub horizons: Vec<f64>,
    pub resamples: usize,
    pub level: f64,
    pub labels: Vec<Label>,
    pub seed: u64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("checkpoint.bin"),
            manifest: PathBuf::from("manifest.json"),
            split: Split::Test,
            horizons: vec![1.0, 2.0, 3.0],
            resamples: 1000,
            level: 0.95,
            labels: Label::ALL.to_vec(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainConfig {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub patient: String,
    pub labels: Vec<Label>,
    /// 1-based interval; exclusive with `time_years`.
    pub interval: Option<usize>,
    pub time_years: Option<f64>,
    pub score: ScoreMode,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("checkpoint.bin"),
            manifest: PathBuf::from("manifest.json"),
            patient: String::new(),
            labels: vec![Label::Os],
            interval: None,
            time_years: None,
            score: ScoreMode::Logit,
            seed: 0,
        }
    }
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::json(p, e))
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => {
            let mut cfg: SynthConfig = read_config(a.config.as_deref())?;
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            cmd_synth(&cfg, &a.out).map(|_| ())
        }
        Command::Train(a) => {
            let mut cfg: TrainRunConfig = read_config(a.config.as_deref())?;
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            cmd_train(&cfg, &a.out).map(|_| ())
        }
        Command::Evaluate(a) => {
            let mut cfg: EvaluateConfig = read_config(a.config.as_deref())?;
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            cmd_evaluate(&cfg, &a.out).map(|_| ())
        }
        Command::Explain(a) => {
            let mut cfg: ExplainConfig = read_config(a.config.as_deref())?;
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            cmd_explain(&cfg, &a.out).map(|_| ())
        }
    }
}

/// Writes the cohort, `ground_truth.json` and `synth_config.json` under
/// `out`; returns the manifest path.
pub fn cmd_synth(cfg: &SynthConfig, out: &Path) -> Result<PathBuf> {
    let syn = crate::data::generate_synthetic_cohort(cfg.patients, &cfg.signal, cfg.seed)?;
    prepare_out(out)?;
    write_json(&out.join("synth_config.json"), cfg)?;
    let manifest = write_cohort(&syn.cohort, out)?;
    write_json(&out.join("ground_truth.json"), &syn.truth)?;
    log::info!("wrote {} patients to {}", cfg.patients, out.display());
    Ok(manifest)
}

fn load_split(manifest: &Path, split: Split) -> Result<Vec<Patient>> {
    let loaded = load_cohort(manifest)?;
    for r in &loaded.rejected {
        log::warn!("rejected patient {}: {}", r.patient_id, r.reason);
    }
    Ok(loaded.cohort.split(split).into_iter().cloned().collect())
}

/// Resolved encoder and training settings of a train run.
pub fn resolve_train(cfg: &TrainRunConfig) -> Result<(EncoderConfig, TrainConfig)> {
    let mut enc = cfg.encoder.clone();
    enc.seed = cfg.seed;
    enc.modality = cfg.modality;
    let mut tc = cfg.train.clone();
    tc.seed = cfg.seed;
    if cfg.labels.is_empty() {
        return Err(Error::Config("at least one label must be trained".into()));
    }
    if tc.label_weights.len() != enc.labels {
        return Err(Error::Config(format!(
            "{} label weights for {} labels",
            tc.label_weights.len(),
            enc.labels
        )));
    }
    for (s, w) in tc.label_weights.iter_mut().enumerate() {
        if !cfg.labels.iter().any(|l| l.index() == s) {
            *w = 0.0;
        }
    }
    Ok((enc, tc))
}

/// Trains on the manifest's train split with validation-based selection.
/// Writes `train_config.json`, `checkpoint.bin` and `loss_log.csv`; returns
/// the checkpoint path.
pub fn cmd_train(cfg: &TrainRunConfig, out: &Path) -> Result<PathBuf> {
    let (enc, tc) = resolve_train(cfg)?;
    let loaded = load_cohort(&cfg.manifest)?;
    for r in &loaded.rejected {
        log::warn!("rejected patient {}: {}", r.patient_id, r.reason);
    }
    let train_p = loaded.cohort.split(Split::Train);
    let val_p = loaded.cohort.split(Split::Validation);
    if train_p.len() < 2 || val_p.is_empty() {
        return Err(Error::Data("manifest needs at least two training and one validation patient".into()));
    }
    let grid = fit_time_grid(&train_p, enc.intervals)?;
    let stats = fit_clinical_normalization(&train_p)?;
    let crop = enc.volume_extents;
    let train_s = prepare_samples(&train_p, &grid, &stats, crop)?;
    let val_s = prepare_samples(&val_p, &grid, &stats, crop)?;

    prepare_out(out)?;
    let resolved = TrainRunConfig {
        encoder: enc.clone(),
        train: TrainConfig {
            seed: tc.seed,
            ..cfg.train.clone()
        },
        ..cfg.clone()
    };
    write_json(&out.join("train_config.json"), &resolved)?;

    let mut model = SurvivalModel::new(enc, grid)?;
    model.set_normalization(stats);
    let outcome = train(model, &train_s, &val_s, &tc)?;
    let ckpt = out.join("checkpoint.bin");
    save_checkpoint(&outcome.model, &ckpt)?;

    let mut csv = String::from("epoch,train_loss,validation_loss,learning_rate\n");
    for l in &outcome.log {
        csv.push_str(&format!("{},{},{},{}\n", l.epoch, l.train_loss, l.validation_loss, l.learning_rate));
    }
    let log_path = out.join("loss_log.csv");
    fs::write(&log_path, csv).map_err(|e| Error::io(&log_path, e))?;
    log::info!("best epoch {} of {}", outcome.best_epoch, outcome.log.len());
    Ok(ckpt)
}

/// A metric value or the reason it is undefined on this cohort.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MetricEntry<T> {
    Ok(T),
    Undefined { reason: String },
}

impl<T> MetricEntry<T> {
    fn from_result(r: Result<T>) -> Result<Self> {
        match r {
            Ok(v) => Ok(MetricEntry::Ok(v)),
            Err(e @ (Error::UndefinedMetric(_) | Error::DegenerateData(_))) => {
                Ok(MetricEntry::Undefined { reason: e.to_string() })
            }
            Err(e) => Err(e),
        }
    }

    pub fn value(&self) -> Option<&T> {
        match self {
            MetricEntry::Ok(v) => Some(v),
            MetricEntry::Undefined { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRankEntry {
    pub median_risk: f64,
    pub high_risk_patients: usize,
    pub low_risk_patients: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub km_csv: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AurocEntry {
    pub horizon_years: f64,
    pub auroc: MetricEntry<BootstrapCi>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabelReport {
    pub label: Label,
    pub events: usize,
    pub c_index: MetricEntry<BootstrapCi>,
    pub log_rank: MetricEntry<LogRankEntry>,
    pub auroc: Vec<AurocEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub split: Split,
    pub patients: usize,
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
    pub labels: Vec<LabelReport>,
}

/// Per-label C-index, median-split log-rank and horizon AUROCs, each with
/// bootstrap intervals where applicable. KM curves of both risk groups go to
/// `km_<label>.csv` under `out` when given.
pub fn evaluate_samples(
    model: &SurvivalModel,
    samples: &[Sample],
    cfg: &EvaluateConfig,
    out: Option<&Path>,
) -> Result<MetricsReport> {
    let grid = model.grid();
    let curves: Vec<_> = samples.iter().map(|s| model.predict(s)).collect::<Result<_>>()?;
    let mut labels = Vec::with_capacity(cfg.labels.len());
    for &label in &cfg.labels {
        let s = label.index();
        if s >= model.config().labels {
            return Err(Error::Usage(format!("model has no head for label {label}")));
        }
        let obs: Vec<Observed> = samples
            .iter()
            .map(|x| Observed {
                time: x.outcomes[s].0,
                event: x.outcomes[s].1,
            })
            .collect();
        let risks: Vec<f64> = curves.iter().map(|c| risk_score(&c[s], grid)).collect();
        let pick = |idx: &[usize], v: &[f64]| -> (Vec<f64>, Vec<Observed>) {
            (idx.iter().map(|&i| v[i]).collect(), idx.iter().map(|&i| obs[i]).collect())
        };

        let c_index = MetricEntry::from_result(bootstrap_ci(
            samples.len(),
            |idx| {
                let (r, o) = pick(idx, &risks);
                concordance_index(&r, &o)
            },
            cfg.resamples,
            cfg.level,
            cfg.seed,
        ))?;

        let (high, low) = median_split_indices(&risks);
        let km_name = format!("km_{}.csv", label.name());
        let log_rank_entry = MetricEntry::from_result((|| {
            let a: Vec<Observed> = high.iter().map(|&i| obs[i]).collect();
            let b: Vec<Observed> = low.iter().map(|&i| obs[i]).collect();
            let lr = log_rank(&a, &b)?;
            if let Some(dir) = out {
                write_km_csv(&dir.join(&km_name), &[("high", &kaplan_meier(&a)), ("low", &kaplan_meier(&b))])?;
            }
            Ok(LogRankEntry {
                median_risk: median(&risks),
                high_risk_patients: a.len(),
                low_risk_patients: b.len(),
                statistic: lr.statistic,
                p_value: lr.p_value,
                km_csv: km_name.clone(),
            })
        })())?;

        let mut auroc = Vec::with_capacity(cfg.horizons.len());
        for &tau in &cfg.horizons {
            let scores: Vec<f64> = curves.iter().map(|c| 1.0 - c[s].survival_at(grid, tau)).collect();
            let entry = MetricEntry::from_result(bootstrap_ci(
                samples.len(),
                |idx| {
                    let (r, o) = pick(idx, &scores);
                    auroc_at_horizon(&r, &o, tau)
                },
                cfg.resamples,
                cfg.level,
                cfg.seed,
            ))?;
            auroc.push(AurocEntry {
                horizon_years: tau,
                auroc: entry,
            });
        }
        labels.push(LabelReport {
            label,
            events: obs.iter().filter(|o| o.event).count(),
            c_index,
            log_rank: log_rank_entry,
            auroc,
        });
    }
    Ok(MetricsReport {
        split: cfg.split,
        patients: samples.len(),
        resamples: cfg.resamples,
        level: cfg.level,
        seed: cfg.seed,
        labels,
    })
}

fn model_samples(model: &SurvivalModel, patients: &[Patient]) -> Result<Vec<Sample>> {
    let stats = model
        .normalization()
        .ok_or_else(|| Error::Checkpoint("checkpoint carries no clinical normalization".into()))?;
    let refs: Vec<&Patient> = patients.iter().collect();
    prepare_samples(&refs, model.grid(), stats, model.config().volume_extents)
}

/// Writes `evaluate_config.json`, `metrics.json` and per-label KM CSVs;
/// returns the report path.
pub fn cmd_evaluate(cfg: &EvaluateConfig, out: &Path) -> Result<PathBuf> {
    let model = load_checkpoint(&cfg.checkpoint)?;
    let patients = load_split(&cfg.manifest, cfg.split)?;
    if patients.is_empty() {
        return Err(Error::Data(format!("no patients in the {:?} split", cfg.split)));
    }
    let samples = model_samples(&model, &patients)?;
    prepare_out(out)?;
    write_json(&out.join("evaluate_config.json"), cfg)?;
    let report = evaluate_samples(&model, &samples, cfg, Some(out))?;
    let path = out.join("metrics.json");
    write_json(&path, &report)?;
    Ok(path)
}

/// Writes one activation map per requested label; returns the header
/// paths.
pub fn cmd_explain(cfg: &ExplainConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let model = load_checkpoint(&cfg.checkpoint)?;
    let loaded = load_cohort(&cfg.manifest)?;
    let patient = loaded
        .cohort
        .find(&cfg.patient)
        .ok_or_else(|| Error::Usage(format!("patient `{}` not in manifest", cfg.patient)))?
        .clone();
    let interval = match (cfg.interval, cfg.time_years) {
        (Some(k), None) => k,
        (None, Some(t)) => model.grid().interval_index(t)?,
        _ => return Err(Error::Config("give exactly one of `interval` and `time_years`".into())),
    };
    if cfg.labels.is_empty() {
        return Err(Error::Config("no labels requested".into()));
    }
    let sample = model_samples(&model, std::slice::from_ref(&patient))?.remove(0);
    prepare_out(out)?;
    write_json(&out.join("explain_config.json"), cfg)?;
    let mut written = Vec::with_capacity(cfg.labels.len());
    for &label in &cfg.labels {
        let guidance = GuidanceVector::for_model(&model, label, interval)?;
        let map = activation_map(&model, &patient.id, &sample.volume, &sample.clinical, &guidance, cfg.score)?;
        let stem = out.join(format!("map_{}_{}_k{}", patient.id, label.name(), interval));
        let (header, _) = export_map(&map, &stem, patient.volume.spacing)?;
        written.push(header);
    }
    Ok(written)
}
