//! Trains a small image-driven model, then computes time-event activation
//! maps for one test patient at several intervals and exports them.
//!
//! Each map is written as a raw volume plus an axial mid-slice PGM, which any
//! image viewer opens directly.

use std::path::PathBuf;

use multisurv::data::{generate_synthetic_cohort, SignalSpec, Split};
use multisurv::gradteam::{activation_map, dilate, export_map, top_fraction_inside, GuidanceVector, ScoreMode};
use multisurv::network::{
    fit_clinical_normalization, fit_time_grid, prepare_samples, train, ConvSpec, EncoderConfig, SurvivalModel,
    TrainConfig,
};
use multisurv::survival::Label;

fn main() -> multisurv::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "activation_maps".into()));
    let crop = [16, 16, 16];
    // all signal in the image so the maps have something to find
    let spec = SignalSpec { clinical_weight: 0.0, ..SignalSpec::default() };
    let synth = generate_synthetic_cohort(300, &spec, 3)?;
    let train_split = synth.cohort.split(Split::Train);
    let grid = fit_time_grid(&train_split, 16)?;
    let stats = fit_clinical_normalization(&train_split)?;
    let samples = |s| prepare_samples(&synth.cohort.split(s), &grid, &stats, crop);
    let (tr, va, te) = (samples(Split::Train)?, samples(Split::Validation)?, samples(Split::Test)?);

    let encoder = EncoderConfig {
        conv: [2, 1, 1, 1].map(|stride| ConvSpec { channels: 8, kernel: 3, stride, padding: 1 }).to_vec(),
        fc_width: 16,
        volume_extents: crop,
        intervals: grid.intervals(),
        seed: 3,
        ..EncoderConfig::default()
    };
    let config = TrainConfig { learning_rate: 3e-3, batch_size: 32, epochs: 8, seed: 3, ..TrainConfig::default() };
    let model = train(SurvivalModel::new(encoder, grid.clone())?, &tr, &va, &config)?.model;

    let patient = &te[0];
    let nvox: usize = crop.iter().product();
    let mask: Vec<bool> = patient.volume.data()[nvox..].iter().map(|&v| v > 0.5).collect();
    let region = dilate(&mask, crop, [2, 2, 2]);
    let k = grid.intervals();
    for (interval, mode) in [(1, ScoreMode::Logit), (k / 2, ScoreMode::Logit), (k, ScoreMode::LogPmf)] {
        let guidance = GuidanceVector::for_model(&model, Label::Os, interval)?;
        let map = activation_map(&model, &patient.id, &patient.volume, &patient.clinical, &guidance, mode)?;
        let stem = out.join(format!("{}_os_interval{interval}", patient.id));
        let (header, pgm) = export_map(&map, &stem, [1.0; 3])?;
        let inside = top_fraction_inside(&map.values, &region, 0.1)
            .map_or("empty map".to_string(), |f| format!("{:.0}% of top decile near the mask", 100.0 * f));
        println!("interval {interval:>2} ({mode:?}): {inside}; {} and {}", header.display(), pgm.display());
    }
    Ok(())
}
