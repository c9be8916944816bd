//! Builds an MTLR head by hand and prints its event PMF, survival curve and
//! risk score, plus the log-likelihood of exact and censored observations.

use multisurv::mtlr::{loglik, pmf, risk_score, MtlrHead};
use multisurv::survival::{encode_event, Label, OutcomeRecord, TimeGrid};

fn main() -> multisurv::Result<()> {
    // five intervals: [0,1) [1,2) [2,3) [3,5) [5,inf)
    let grid = TimeGrid::new(vec![1.0, 2.0, 3.0, 5.0])?;
    let features = 2;
    // weights are [features, K-1]; the second feature pushes mass toward early intervals
    let head = MtlrHead::new(
        features,
        grid.intervals(),
        vec![0.0, 0.0, 0.0, 0.0, 0.8, 0.6, 0.4, 0.2],
        vec![-0.5, 0.0, 0.3, 0.6],
    )?;

    for (name, x) in [("low risk", [1.0, -1.5]), ("high risk", [1.0, 1.5])] {
        let curve = pmf(&head, &x)?;
        println!("{name}");
        println!("  pmf      {:?}", rounded(curve.pmf()));
        println!("  survival {:?}", rounded(curve.survival()));
        println!("  S(2.5 years) = {:.4}", curve.survival_at(&grid, 2.5));
        println!("  risk score   = {:.4}", risk_score(&curve, &grid));
        for (time, event) in [(2.5, true), (2.5, false)] {
            let target = encode_event(&grid, &OutcomeRecord::new(Label::Os, time, event)?)?;
            println!("  log-likelihood, {} at {time}: {:.4}", if event { "event" } else { "censored" }, loglik(&head, &x, &target)?);
        }
    }
    Ok(())
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|p| (p * 1e4).round() / 1e4).collect()
}
