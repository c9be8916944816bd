//! Generates a synthetic cohort with known hazards, writes it to disk and
//! reads it back through the regular loader.
//!
//! `cargo run --release --example synthetic_cohort -- [out_dir] [patients]`

use std::path::PathBuf;

use multisurv::data::{generate_synthetic_cohort, load_cohort, write_cohort, SignalSpec, Split};
use multisurv::metrics::{concordance_index, Observed};
use multisurv::survival::Label;

fn main() -> multisurv::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synthetic_cohort".into()));
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(60);

    let synth = generate_synthetic_cohort(n, &SignalSpec::default(), 42)?;
    let manifest = write_cohort(&synth.cohort, &out)?;
    println!("wrote {}", manifest.display());

    let loaded = load_cohort(&manifest)?;
    println!(
        "loaded {} patients ({} rejected); train/validation/test = {}/{}/{}",
        loaded.cohort.len(),
        loaded.rejected.len(),
        loaded.cohort.split(Split::Train).len(),
        loaded.cohort.split(Split::Validation).len(),
        loaded.cohort.split(Split::Test).len(),
    );

    let first = &loaded.cohort.patients[0];
    println!("{}: {:?}", first.id, first.clinical);

    // the generator's own log-hazards bound what any model can reach
    for label in Label::ALL {
        let obs: Vec<Observed> = synth.cohort.patients.iter().map(|p| p.outcome(label).unwrap().into()).collect();
        let risks: Vec<f64> = synth.truth.patients.iter().map(|t| t.log_hazards[label.index()]).collect();
        let events = obs.iter().filter(|o| o.event).count();
        println!("{label}: {events} events, oracle C-index {:.3}", concordance_index(&risks, &obs)?);
    }
    Ok(())
}
