use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::Observed;
use crate::error::{Error, Result};

/// Product-limit survival estimate, recorded at each distinct event time.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct KmCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    /// Patients at risk just before each time.
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
    /// Size of the cohort at time 0.
    pub n: usize,
}

impl KmCurve {
    /// Right-continuous step value `Ŝ(t)`.
    pub fn survival_at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&x| x <= t) {
            0 => 1.0,
            i => self.survival[i - 1],
        }
    }
}

/// Groups `outcomes` by distinct time: `(time, at risk, events, censored)`.
pub(crate) fn risk_table(outcomes: &[Observed]) -> Vec<(f64, usize, usize, usize)> {
    let mut sorted: Vec<Observed> = outcomes.to_vec();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut table = Vec::new();
    let mut at_risk = sorted.len();
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].time;
        let mut events = 0;
        let mut censored = 0;
        while i < sorted.len() && sorted[i].time == t {
            if sorted[i].event {
                events += 1;
            } else {
                censored += 1;
            }
            i += 1;
        }
        table.push((t, at_risk, events, censored));
        at_risk -= events + censored;
    }
    table
}

/// Kaplan–Meier estimator. Censored patients leave the risk set after
/// events at their own time.
pub fn kaplan_meier(outcomes: &[Observed]) -> KmCurve {
    let mut curve = KmCurve {
        n: outcomes.len(),
        ..KmCurve::default()
    };
    // Within a stretch without censoring the product telescopes to
    // remaining / segment_size, which keeps uncensored curves exact.
    let mut base = 1.0;
    let mut segment_size = outcomes.len();
    let mut s = 1.0;
    for (t, n, d, c) in risk_table(outcomes) {
        if d > 0 {
            s = base * (n - d) as f64 / segment_size as f64;
            curve.times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(n);
            curve.events.push(d);
        }
        if c > 0 {
            base = s;
            segment_size = n - d - c;
        }
    }
    curve
}

/// Writes curves as CSV with columns `time,survival,at_risk,events,group`.
/// Each group starts with a row at time 0.
pub fn write_km_csv(path: &Path, curves: &[(&str, &KmCurve)]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "time,survival,at_risk,events,group").expect("in-memory write");
    for (group, c) in curves {
        writeln!(out, "0,1,{},0,{group}", c.n).expect("in-memory write");
        for i in 0..c.times.len() {
            writeln!(out, "{},{},{},{},{group}", c.times[i], c.survival[i], c.at_risk[i], c.events[i])
                .expect("in-memory write");
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
