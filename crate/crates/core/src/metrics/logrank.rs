use serde::Serialize;

use super::km::risk_table;
use super::Observed;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogRank {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-group log-rank test with hypergeometric variance.
pub fn log_rank(group_a: &[Observed], group_b: &[Observed]) -> Result<LogRank> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::UndefinedMetric("log-rank needs two non-empty groups".into()));
    }
    let tagged: Vec<(Observed, bool)> = group_a
        .iter()
        .map(|&o| (o, true))
        .chain(group_b.iter().map(|&o| (o, false)))
        .collect();
    let pooled: Vec<Observed> = tagged.iter().map(|t| t.0).collect();
    let table = risk_table(&pooled);

    let mut sorted = tagged;
    sorted.sort_by(|x, y| x.0.time.total_cmp(&y.0.time));
    let mut n_a = group_a.len();
    let mut n_b = group_b.len();
    let mut cursor = 0;
    let mut diff = 0.0;
    let mut var = 0.0;
    let mut any_event = false;
    for (t, n, d, _) in table {
        let (mut d_a, mut d_b, mut left_a, mut left_b) = (0usize, 0usize, 0usize, 0usize);
        while cursor < sorted.len() && sorted[cursor].0.time == t {
            let (o, in_a) = sorted[cursor];
            match (in_a, o.event) {
                (true, true) => d_a += 1,
                (false, true) => d_b += 1,
                _ => {}
            }
            if in_a {
                left_a += 1;
            } else {
                left_b += 1;
            }
            cursor += 1;
        }
        if d > 0 {
            any_event = true;
            // O_a − E_a = (d_a·n_b − d_b·n_a)/n, antisymmetric in the groups
            diff += (d_a as f64 * n_b as f64 - d_b as f64 * n_a as f64) / n as f64;
            if n > 1 {
                var += (d as f64 * n_a as f64 * n_b as f64 * (n - d) as f64) / ((n * n) as f64 * (n - 1) as f64);
            }
        }
        n_a -= left_a;
        n_b -= left_b;
    }
    if !any_event {
        return Err(Error::UndefinedMetric("log-rank with no events in either group".into()));
    }
    if var == 0.0 {
        return Err(Error::UndefinedMetric("log-rank variance is zero".into()));
    }
    let statistic = diff * diff / var;
    Ok(LogRank {
        statistic,
        p_value: chi_square_1_sf(statistic),
    })
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // series for P(a, x)
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..1000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        1.0 - sum * log_prefix.exp()
    } else {
        // continued fraction for Q(a, x), modified Lentz
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        log_prefix.exp() * h
    }
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi_square_1_sf(x: f64) -> f64 {
    gamma_q(0.5, x / 2.0)
}
