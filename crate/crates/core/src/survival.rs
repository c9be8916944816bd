//! Time-axis discretization and MTLR target sequences.
//!
//! Sequences use the cumulative encoding: `bits[k-1] = 1` iff the event
//! happened at or before boundary `t_k`. An event in interval `i` therefore
//! sets positions `i..K-1`, and an event in the open last interval `K` is the
//! all-zero reference sequence.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four survival outcomes predicted jointly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    /// Overall survival.
    Os,
    /// Local failure-free survival.
    Lffs,
    /// Regional failure-free survival.
    Rffs,
    /// Distant failure-free survival.
    Dffs,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::Os, Label::Lffs, Label::Rffs, Label::Dffs];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Os => "os",
            Label::Lffs => "lffs",
            Label::Rffs => "rffs",
            Label::Dffs => "dffs",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "os" => Ok(Label::Os),
            "lffs" => Ok(Label::Lffs),
            "rffs" => Ok(Label::Rffs),
            "dffs" => Ok(Label::Dffs),
            other => Err(Error::Usage(format!("unknown label `{other}`"))),
        }
    }
}

/// `K` intervals `(t_{k-1}, t_k]` with `t_0 = 0` and `t_K = ∞`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    boundaries: Vec<f64>,
}

impl TimeGrid {
    /// Grid from explicit finite boundaries `t_1 < ... < t_{K-1}` (years).
    pub fn new(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(Error::Config("a time grid needs at least one boundary (K >= 2)".into()));
        }
        if boundaries.iter().any(|b| !b.is_finite() || *b <= 0.0) {
            return Err(Error::Config(format!("time grid boundaries must be positive and finite: {boundaries:?}")));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("time grid boundaries must strictly increase: {boundaries:?}")));
        }
        Ok(Self { boundaries })
    }

    /// Finite boundaries `t_1..t_{K-1}`.
    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Number of intervals `K`.
    pub fn intervals(&self) -> usize {
        self.boundaries.len() + 1
    }

    /// `t_k` for `k` in `0..K`; `t_0 = 0`.
    pub fn boundary(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.boundaries[k - 1]
        }
    }

    /// The unique 1-based `k` with `t_{k-1} < time <= t_k`.
    pub fn interval_index(&self, time: f64) -> Result<usize> {
        if !(time > 0.0) {
            return Err(Error::Data(format!("survival time must be positive, got {time}")));
        }
        Ok(self.boundaries.partition_point(|&b| b < time) + 1)
    }
}

/// Quantile grid over pooled event times.
///
/// Boundaries sit at the `j/K` empirical quantiles (linear interpolation
/// between order statistics) for `j = 1..K-1`. Coinciding quantiles are
/// nudged apart by single ulps.
pub fn build_time_grid(event_times: &[f64], k: usize) -> Result<TimeGrid> {
    if k < 2 {
        return Err(Error::Config(format!("interval count must be at least 2, got {k}")));
    }
    let mut sorted: Vec<f64> = event_times.to_vec();
    if sorted.iter().any(|t| !t.is_finite() || *t <= 0.0) {
        return Err(Error::Data("event times must be positive and finite".into()));
    }
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::Config(format!(
            "need at least {k} distinct event times for {k} intervals, got {}",
            distinct.len()
        )));
    }
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let n = sorted.len();
    let mut bounds: Vec<f64> = (1..k)
        .map(|j| {
            let h = (n - 1) as f64 * j as f64 / k as f64;
            let i = h.floor() as usize;
            let frac = h - i as f64;
            if i + 1 < n {
                sorted[i] + frac * (sorted[i + 1] - sorted[i])
            } else {
                sorted[i]
            }
        })
        .collect();
    for i in 1..bounds.len() {
        if bounds[i] <= bounds[i - 1] {
            bounds[i] = bounds[i - 1].next_up();
        }
    }
    // nudging may run past the largest time; pull back from the top
    let last = bounds.len() - 1;
    if bounds[last] > hi {
        bounds[last] = hi;
        for i in (0..last).rev() {
            if bounds[i] >= bounds[i + 1] {
                bounds[i] = bounds[i + 1].next_down();
            }
        }
    }
    debug_assert!(bounds[0] >= lo);
    TimeGrid::new(bounds)
}

/// One observed outcome for one label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub label: Label,
    /// Years since start of follow-up.
    pub time: f64,
    /// `true` when the event was observed, `false` when right-censored.
    pub event: bool,
}

impl OutcomeRecord {
    pub fn new(label: Label, time: f64, event: bool) -> Result<Self> {
        if !time.is_finite() || time <= 0.0 {
            return Err(Error::Data(format!("{label}: time must be positive and finite, got {time}")));
        }
        Ok(Self { label, time, event })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetSequence {
    /// Event observed in `interval` (1-based); `bits` is its legal sequence.
    Exact { interval: usize, bits: Vec<u8> },
    /// Censored in `interval`; any event interval `interval..=K` remains
    /// admissible.
    Censored { interval: usize },
}

impl TargetSequence {
    /// The 1-based interval range still consistent with the observation.
    pub fn admissible(&self, k: usize) -> (usize, usize) {
        match *self {
            TargetSequence::Exact { interval, .. } => (interval, interval),
            TargetSequence::Censored { interval } => (interval, k),
        }
    }

    pub fn interval(&self) -> usize {
        match *self {
            TargetSequence::Exact { interval, .. } | TargetSequence::Censored { interval } => interval,
        }
    }

    pub fn is_censored(&self) -> bool {
        matches!(self, TargetSequence::Censored { .. })
    }
}

/// Cumulative sequence of length `K-1` for an event in `interval`.
pub fn legal_sequence(interval: usize, k: usize) -> Vec<u8> {
    (1..k).map(|pos| u8::from(pos >= interval)).collect()
}

/// Interval encoded by a legal sequence: position of the first set bit, or
/// `K` for the all-zero sequence.
pub fn decode_sequence(bits: &[u8]) -> usize {
    bits.iter()
        .position(|&b| b == 1)
        .map(|p| p + 1)
        .unwrap_or(bits.len() + 1)
}

pub fn encode_event(grid: &TimeGrid, record: &OutcomeRecord) -> Result<TargetSequence> {
    let interval = grid.interval_index(record.time)?;
    Ok(if record.event {
        TargetSequence::Exact {
            interval,
            bits: legal_sequence(interval, grid.intervals()),
        }
    } else {
        TargetSequence::Censored { interval }
    })
}
