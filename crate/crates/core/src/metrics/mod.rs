//! Evaluation protocol: C-index, Kaplan–Meier, log-rank, horizon AUROC,
//! bootstrap intervals and median-risk stratification.

pub mod auroc;
pub mod bootstrap;
pub mod concordance;
pub mod km;
pub mod logrank;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survival::OutcomeRecord;

pub use auroc::{auroc_at_horizon, horizon_class};
pub use bootstrap::{bootstrap_ci, quantile_sorted, BootstrapCi};
pub use concordance::concordance_index;
pub use km::{kaplan_meier, write_km_csv, KmCurve};
pub use logrank::{chi_square_1_sf, log_rank, LogRank};

/// Follow-up time (years) and event status of one patient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observed {
    pub time: f64,
    pub event: bool,
}

impl From<&OutcomeRecord> for Observed {
    fn from(o: &OutcomeRecord) -> Self {
        Self {
            time: o.time,
            event: o.event,
        }
    }
}

pub(crate) fn check_aligned(values: &[f64], outcomes: &[Observed]) -> Result<()> {
    if values.len() != outcomes.len() {
        return Err(Error::Dimension {
            op: "metric",
            lhs: vec![values.len()],
            rhs: vec![outcomes.len()],
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("risk scores must be finite".into()));
    }
    Ok(())
}

/// Per-patient risks for one label.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RiskSeries {
    ids: Vec<String>,
    values: Vec<f64>,
}

impl RiskSeries {
    pub fn new(ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if ids.len() != values.len() {
            return Err(Error::Dimension {
                op: "risk series",
                lhs: vec![ids.len()],
                rhs: vec![values.len()],
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("risk scores must be finite".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Data(format!("duplicate patient id {dup} in risk series")));
        }
        Ok(Self { ids, values })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, 0.5)
}

/// Indices above the median (high risk) and at or below it (low risk), in
/// input order.
pub fn median_split_indices(values: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let m = median(values);
    (0..values.len()).partition(|&i| values[i] > m)
}

/// Patient ids split at the median risk: `(high, low)`.
pub fn median_risk_split(risks: &RiskSeries) -> Result<(Vec<String>, Vec<String>)> {
    if risks.is_empty() {
        return Err(Error::Data("median split of an empty risk series".into()));
    }
    let (high, low) = median_split_indices(&risks.values);
    let ids = |v: Vec<usize>| v.into_iter().map(|i| risks.ids[i].clone()).collect();
    Ok((ids(high), ids(low)))
}
