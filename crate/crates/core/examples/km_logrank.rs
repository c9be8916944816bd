//! Kaplan-Meier curves, a log-rank test and a bootstrap C-index interval on a
//! small hand-written cohort.

use multisurv::metrics::{bootstrap_ci, concordance_index, kaplan_meier, log_rank, write_km_csv, Observed};

fn main() -> multisurv::Result<()> {
    let obs = |v: &[(f64, bool)]| v.iter().map(|&(time, event)| Observed { time, event }).collect::<Vec<_>>();
    let high = obs(&[(0.4, true), (0.9, true), (1.1, false), (1.3, true), (2.0, true), (2.2, false), (3.1, true)]);
    let low = obs(&[(1.2, true), (2.5, false), (3.0, true), (3.6, false), (4.2, true), (4.8, false), (5.0, false)]);

    for (name, group) in [("high", &high), ("low", &low)] {
        let km = kaplan_meier(group);
        println!("{name} risk group");
        for i in 0..km.times.len() {
            println!(
                "  t={:.1}  S={:.4}  at risk {}  events {}",
                km.times[i], km.survival[i], km.at_risk[i], km.events[i]
            );
        }
    }
    let lr = log_rank(&high, &low)?;
    println!("log-rank statistic {:.4}, p = {:.4}", lr.statistic, lr.p_value);

    let path = std::env::temp_dir().join("km_example.csv");
    write_km_csv(&path, &[("high", &kaplan_meier(&high)), ("low", &kaplan_meier(&low))])?;
    println!("KM table written to {}", path.display());

    // risk 1 for the high group, 0 for the low group
    let all: Vec<Observed> = high.iter().chain(&low).copied().collect();
    let risks: Vec<f64> = (0..all.len()).map(|i| if i < high.len() { 1.0 } else { 0.0 }).collect();
    let c = concordance_index(&risks, &all)?;
    let ci = bootstrap_ci(
        all.len(),
        |idx| {
            let r: Vec<f64> = idx.iter().map(|&i| risks[i]).collect();
            let o: Vec<Observed> = idx.iter().map(|&i| all[i]).collect();
            concordance_index(&r, &o)
        },
        1000,
        0.95,
        0,
    )?;
    println!("C-index {c:.3}, 95% bootstrap interval [{:.3}, {:.3}]", ci.lower, ci.upper);
    Ok(())
}
