use super::{check_aligned, Observed};
use crate::error::{Error, Result};

/// Fenwick tree of counts over risk ranks.
struct Counts(Vec<u64>);

impl Counts {
    fn new(n: usize) -> Self {
        Self(vec![0; n + 1])
    }

    fn add(&mut self, rank: usize) {
        let mut i = rank + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted ranks `< rank`.
    fn below(&self, rank: usize) -> u64 {
        let mut i = rank;
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Dense ranks of `values` (equal values share a rank).
pub(crate) fn dense_ranks(values: &[f64]) -> (Vec<usize>, usize) {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let ranks = values
        .iter()
        .map(|v| sorted.partition_point(|s| s < v))
        .collect();
    (ranks, sorted.len())
}

/// Harrell's C-index.
///
/// A pair is comparable when the earlier time is an event and the other
/// time is strictly later (whatever its status); it scores 1 if the earlier
/// patient has the higher risk and 0.5 on a risk tie. Two events at the same
/// time also form a comparable pair, credited 0.5.
pub fn concordance_index(risks: &[f64], outcomes: &[Observed]) -> Result<f64> {
    check_aligned(risks, outcomes)?;
    let n = risks.len();
    let (ranks, distinct) = dense_ranks(risks);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| outcomes[b].time.total_cmp(&outcomes[a].time));

    // sweep from the latest time down; `later` holds everyone strictly later
    let mut later = Counts::new(distinct);
    let mut inserted = 0u64;
    let mut halves = 0u64;
    let mut comparable = 0u64;
    let mut start = 0;
    while start < n {
        let t = outcomes[order[start]].time;
        let end = start + order[start..].iter().take_while(|&&i| outcomes[i].time == t).count();
        let group = &order[start..end];
        let mut events = 0u64;
        for &i in group {
            if !outcomes[i].event {
                continue;
            }
            events += 1;
            let lower = later.below(ranks[i]);
            let not_higher = later.below(ranks[i] + 1);
            halves += 2 * lower + (not_higher - lower);
            comparable += inserted;
        }
        let tied_pairs = events * events.saturating_sub(1) / 2;
        halves += tied_pairs;
        comparable += tied_pairs;
        for &i in group {
            later.add(ranks[i]);
        }
        inserted += group.len() as u64;
        start = end;
    }
    if comparable == 0 {
        return Err(Error::UndefinedMetric("C-index has no comparable pairs".into()));
    }
    Ok((halves as f64 / 2.0) / comparable as f64)
}
