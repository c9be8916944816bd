use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Redraws allowed for one resample whose metric is undefined.
pub const MAX_REDRAWS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BootstrapCi {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub resamples: usize,
    pub level: f64,
}

/// Type-7 quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap over patient-level resamples with replacement.
///
/// `metric` receives the resampled row indices of a sample of size `n`.
/// Resample `r` draws from its own stream derived from `(seed, r)`, so the
/// interval does not depend on thread scheduling. A resample on which the
/// metric is undefined is redrawn up to [`MAX_REDRAWS`] times.
pub fn bootstrap_ci<F>(n: usize, metric: F, resamples: usize, level: f64, seed: u64) -> Result<BootstrapCi>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    if n == 0 || resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::Config("bootstrap needs data, resamples and a level in (0, 1)".into()));
    }
    let all: Vec<usize> = (0..n).collect();
    let estimate = metric(&all)?;

    let draws: Vec<Result<(f64, bool)>> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut idx = vec![0; n];
            let mut first_undefined = false;
            for attempt in 0..=MAX_REDRAWS {
                for i in idx.iter_mut() {
                    *i = rng.gen_range(0..n);
                }
                match metric(&idx) {
                    Ok(v) => return Ok((v, first_undefined)),
                    Err(Error::UndefinedMetric(_)) => first_undefined |= attempt == 0,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::DegenerateData(format!(
                "metric undefined on {} consecutive draws of resample {r}",
                MAX_REDRAWS + 1
            )))
        })
        .collect();

    let mut values = Vec::with_capacity(resamples);
    let mut undefined = 0;
    for d in draws {
        let (v, u) = d?;
        values.push(v);
        undefined += u as usize;
    }
    if 2 * undefined > resamples {
        return Err(Error::DegenerateData(format!(
            "metric undefined on {undefined} of {resamples} resamples"
        )));
    }
    values.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok(BootstrapCi {
        estimate,
        lower: quantile_sorted(&values, alpha),
        upper: quantile_sorted(&values, 1.0 - alpha),
        resamples,
        level,
    })
}
