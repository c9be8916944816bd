//! Trains the multi-label network on a synthetic cohort and reports test
//! C-index per label next to the generator's oracle.

use multisurv::data::{generate_synthetic_cohort, SignalSpec, Split};
use multisurv::metrics::{concordance_index, Observed};
use multisurv::mtlr::risk_score;
use multisurv::network::{
    fit_clinical_normalization, fit_time_grid, prepare_samples, save_checkpoint, train, ConvSpec, EncoderConfig,
    SurvivalModel, TrainConfig,
};
use multisurv::survival::Label;

fn main() -> multisurv::Result<()> {
    let crop = [16, 16, 16];
    let synth = generate_synthetic_cohort(300, &SignalSpec::default(), 1)?;
    let train_split = synth.cohort.split(Split::Train);
    let grid = fit_time_grid(&train_split, 16)?;
    let stats = fit_clinical_normalization(&train_split)?;
    let samples = |s| prepare_samples(&synth.cohort.split(s), &grid, &stats, crop);
    let (tr, va, te) = (samples(Split::Train)?, samples(Split::Validation)?, samples(Split::Test)?);

    let encoder = EncoderConfig {
        conv: [(4, 2), (8, 2), (8, 2), (8, 1)]
            .into_iter()
            .map(|(channels, stride)| ConvSpec { channels, kernel: 3, stride, padding: 1 })
            .collect(),
        fc_width: 16,
        volume_extents: crop,
        intervals: grid.intervals(),
        seed: 1,
        ..EncoderConfig::default()
    };
    let config = TrainConfig { learning_rate: 3e-3, batch_size: 32, epochs: 15, seed: 1, ..TrainConfig::default() };
    let model = SurvivalModel::new(encoder, grid.clone())?;
    println!("{} parameters, {} training patients", model.parameter_count(), tr.len());

    let outcome = train(model, &tr, &va, &config)?;
    for e in &outcome.log {
        println!(
            "epoch {:>2}  train {:.4}  validation {:.4}  lr {:.1e}",
            e.epoch, e.train_loss, e.validation_loss, e.learning_rate
        );
    }
    println!("kept epoch {}", outcome.best_epoch);

    let curves: Vec<_> = te.iter().map(|s| outcome.model.predict(s)).collect::<Result<_, _>>()?;
    let ids: Vec<&str> = te.iter().map(|s| s.id.as_str()).collect();
    for label in Label::ALL {
        let i = label.index();
        let obs: Vec<Observed> = te.iter().map(|s| Observed { time: s.outcomes[i].0, event: s.outcomes[i].1 }).collect();
        let risks: Vec<f64> = curves.iter().map(|c| risk_score(&c[i], &grid)).collect();
        let oracle = synth.truth.oracle_risks(label, &ids).expect("test ids come from the generator");
        println!(
            "{label}: test C-index {:.3} (oracle {:.3})",
            concordance_index(&risks, &obs)?,
            concordance_index(&oracle, &obs)?
        );
    }

    let path = std::env::temp_dir().join("multisurv_example.ckpt");
    save_checkpoint(&outcome.model, &path)?;
    println!("checkpoint written to {}", path.display());
    Ok(())
}
