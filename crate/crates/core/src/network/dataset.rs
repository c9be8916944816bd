use crate::autodiff::Tensor;
use crate::data::{encode_clinical, fit_normalization, preprocess_volume, NormalizationStats, Patient};
use crate::error::{Error, Result};
use crate::survival::{build_time_grid, encode_event, Label, TargetSequence, TimeGrid};

/// One model-ready patient.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[2, X, Y, Z]`: normalized CT and GTV mask.
    pub volume: Tensor,
    /// Coded and normalized clinical vector.
    pub clinical: Tensor,
    /// One target per label, [`Label::ALL`] order.
    pub targets: Vec<TargetSequence>,
    /// Raw outcome times and statuses, [`Label::ALL`] order.
    pub outcomes: Vec<(f64, bool)>,
}

/// Time grid from the pooled event times of all labels in `patients`.
pub fn fit_time_grid(patients: &[&Patient], intervals: usize) -> Result<TimeGrid> {
    let times: Vec<f64> = patients
        .iter()
        .flat_map(|p| p.outcomes.iter().filter(|o| o.event).map(|o| o.time))
        .collect();
    build_time_grid(&times, intervals)
}

/// Normalization statistics fitted on `patients`.
pub fn fit_clinical_normalization(patients: &[&Patient]) -> Result<NormalizationStats> {
    let records: Vec<_> = patients.iter().map(|p| p.clinical.clone()).collect();
    fit_normalization(&records)
}

/// Crops, codes and encodes every patient.
pub fn prepare_samples(
    patients: &[&Patient],
    grid: &TimeGrid,
    stats: &NormalizationStats,
    crop: [usize; 3],
) -> Result<Vec<Sample>> {
    patients
        .iter()
        .map(|p| {
            let targets = Label::ALL
                .iter()
                .map(|&label| {
                    let o = p
                        .outcome(label)
                        .ok_or_else(|| Error::Data(format!("patient {} has no outcome for label {label}", p.id)))?;
                    encode_event(grid, o)
                })
                .collect::<Result<Vec<_>>>()?;
            let outcomes = Label::ALL
                .iter()
                .map(|&l| p.outcome(l).map(|o| (o.time, o.event)).unwrap_or((0.0, false)))
                .collect();
            Ok(Sample {
                id: p.id.clone(),
                volume: preprocess_volume(&p.volume, crop)?,
                clinical: Tensor::vector(encode_clinical(&p.clinical, stats).to_vec()),
                targets,
                outcomes,
            })
        })
        .collect()
}
