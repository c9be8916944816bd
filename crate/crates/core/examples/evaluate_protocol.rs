//! The full command pipeline through the library API: synthesize, train,
//! evaluate. Prints the per-label summary of the metrics report.
//!
//! `cargo run --release --example evaluate_protocol -- [work_dir]`

use std::path::PathBuf;

use multisurv::cli::{cmd_evaluate, cmd_synth, cmd_train, EvaluateConfig, SynthConfig, TrainRunConfig};
use multisurv::network::{ConvSpec, EncoderConfig, TrainConfig};

fn main() -> multisurv::Result<()> {
    let work = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "evaluate_protocol".into()));

    let manifest = cmd_synth(&SynthConfig { patients: 200, seed: 5, ..SynthConfig::default() }, &work.join("data"))?;
    let run = TrainRunConfig {
        manifest: manifest.clone(),
        encoder: EncoderConfig {
            conv: [4, 8, 8].map(|channels| ConvSpec { channels, kernel: 3, stride: 2, padding: 1 }).to_vec(),
            fc_width: 16,
            ..EncoderConfig::default()
        },
        train: TrainConfig { learning_rate: 3e-3, batch_size: 32, epochs: 10, ..TrainConfig::default() },
        seed: 5,
        ..TrainRunConfig::default()
    };
    let checkpoint = cmd_train(&run, &work.join("train"))?;
    let report_path = cmd_evaluate(
        &EvaluateConfig { checkpoint, manifest, resamples: 200, ..EvaluateConfig::default() },
        &work.join("evaluate"),
    )?;

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).expect("report was just written"))
            .expect("report is valid JSON");
    println!("{} test patients, {} resamples", report["patients"], report["resamples"]);
    for label in report["labels"].as_array().into_iter().flatten() {
        let ci = |v: &serde_json::Value| match v["status"].as_str() {
            Some("ok") => format!(
                "{:.3} [{:.3}, {:.3}]",
                v["estimate"].as_f64().unwrap_or(f64::NAN),
                v["lower"].as_f64().unwrap_or(f64::NAN),
                v["upper"].as_f64().unwrap_or(f64::NAN)
            ),
            _ => format!("undefined ({})", v["reason"].as_str().unwrap_or("")),
        };
        println!("{} ({} events)", label["label"].as_str().unwrap_or("?"), label["events"]);
        println!("  C-index  {}", ci(&label["c_index"]));
        for a in label["auroc"].as_array().into_iter().flatten() {
            println!("  AUROC@{}y {}", a["horizon_years"], ci(&a["auroc"]));
        }
        let lr = &label["log_rank"];
        if lr["status"] == "ok" {
            println!("  log-rank p {:.4} (KM curves in {})", lr["p_value"].as_f64().unwrap_or(f64::NAN), lr["km_csv"]);
        }
    }
    println!("full report: {}", report_path.display());
    Ok(())
}
