use super::{check_aligned, Observed};
use crate::error::{Error, Result};

/// Which class a patient falls in for the horizon `τ`: `Some(true)` for an
/// event at or before `τ`, `Some(false)` for follow-up beyond `τ`, `None`
/// when censored at or before `τ`.
pub fn horizon_class(o: &Observed, horizon: f64) -> Option<bool> {
    if o.time <= horizon {
        o.event.then_some(true)
    } else {
        Some(false)
    }
}

/// Area under the ROC curve for "event by `horizon`". Patients censored
/// before the horizon are dropped; score ties count one half.
pub fn auroc_at_horizon(scores: &[f64], outcomes: &[Observed], horizon: f64) -> Result<f64> {
    check_aligned(scores, outcomes)?;
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (s, o) in scores.iter().zip(outcomes) {
        match horizon_class(o, horizon) {
            Some(true) => positives.push(*s),
            Some(false) => negatives.push(*s),
            None => {}
        }
    }
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "AUROC at {horizon} years needs both classes ({} positives, {} negatives)",
            positives.len(),
            negatives.len()
        )));
    }
    negatives.sort_by(f64::total_cmp);
    let mut halves = 0u64;
    for p in &positives {
        let lower = negatives.partition_point(|n| n < p) as u64;
        let not_higher = negatives.partition_point(|n| n <= p) as u64;
        halves += 2 * lower + (not_higher - lower);
    }
    Ok((halves as f64 / 2.0) / (positives.len() as f64 * negatives.len() as f64))
}
