use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use multisurv::data::clinical::{ClinicalRecord, TreatmentModality};
use multisurv::data::{
    encode_clinical, fit_normalization, generate_synthetic_cohort, load_cohort, preprocess_volume, write_cohort,
    Cohort, SignalSpec, Split,
};
use multisurv::metrics::{concordance_index, Observed};
use multisurv::survival::Label;
use multisurv::Error;

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn write_then_load_round_trips() {
    let synth = generate_synthetic_cohort(20, &SignalSpec::default(), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_cohort(&synth.cohort, dir.path()).unwrap();
    let loaded = load_cohort(&manifest).unwrap();
    assert!(loaded.rejected.is_empty());
    assert_eq!(loaded.cohort.len(), 20);
    for (a, b) in synth.cohort.patients.iter().zip(&loaded.cohort.patients) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.split, b.split);
        // f32 volumes are stored losslessly; numbers in the CSV use shortest round-trip text
        assert_eq!(a.volume, b.volume);
        assert_eq!(a.clinical, b.clinical);
        assert_eq!(a.outcomes, b.outcomes);
    }
}

#[test]
fn same_seed_writes_identical_bytes() {
    let write = |seed| {
        let dir = tempfile::tempdir().unwrap();
        let synth = generate_synthetic_cohort(12, &SignalSpec::default(), seed).unwrap();
        write_cohort(&synth.cohort, dir.path()).unwrap();
        dir_bytes(dir.path())
    };
    let a = write(17);
    assert_eq!(a, write(17));
    assert_ne!(a, write(18));
}

#[test]
fn unknown_ajcc_token_rejects_that_patient() {
    let synth = generate_synthetic_cohort(10, &SignalSpec::default(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_cohort(&synth.cohort, dir.path()).unwrap();
    let csv_path = dir.path().join("clinical.csv");
    let mut rdr = csv::Reader::from_path(&csv_path).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "ajcc_stage").unwrap();
    let mut rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    let mut cells: Vec<String> = rows[3].iter().map(str::to_string).collect();
    cells[col] = "V".into();
    rows[3] = csv::StringRecord::from(cells);
    let mut w = csv::Writer::from_path(&csv_path).unwrap();
    w.write_record(&headers).unwrap();
    for r in &rows {
        w.write_record(r).unwrap();
    }
    w.flush().unwrap();

    let loaded = load_cohort(&manifest).unwrap();
    assert_eq!(loaded.cohort.len(), 9);
    assert_eq!(loaded.rejected.len(), 1);
    assert_eq!(loaded.rejected[0].patient_id, "p0003");
    assert!(loaded.rejected[0].reason.contains("ajcc_stage"), "{}", loaded.rejected[0].reason);
    assert!(loaded.rejected[0].reason.contains('V'));
}

#[test]
fn empty_manifest_is_an_empty_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_cohort(&Cohort::default(), dir.path()).unwrap();
    let loaded = load_cohort(&manifest).unwrap();
    assert!(loaded.cohort.is_empty());
    assert!(loaded.rejected.is_empty());
}

#[test]
fn missing_volume_names_the_patient() {
    let synth = generate_synthetic_cohort(10, &SignalSpec::default(), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_cohort(&synth.cohort, dir.path()).unwrap();
    fs::remove_file(dir.path().join("volumes/p0005_mask.raw")).unwrap();
    let err = load_cohort(&manifest).unwrap_err();
    assert!(err.to_string().contains("p0005"), "{err}");
}

#[test]
fn preprocessed_ranges_and_extents() {
    let synth = generate_synthetic_cohort(10, &SignalSpec::default(), 4).unwrap();
    for crop in [[16, 16, 8], [8, 8, 8], [24, 20, 12]] {
        for p in &synth.cohort.patients {
            let t = preprocess_volume(&p.volume, crop).unwrap();
            assert_eq!(t.shape(), &[2, crop[0], crop[1], crop[2]]);
            let vol: usize = crop.iter().product();
            let (ct, mask) = t.data().split_at(vol);
            assert!(ct.iter().all(|v| (-1.0..=1.0).contains(v)));
            assert!(mask.iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(mask.contains(&1.0));
        }
    }
}

#[test]
fn training_stats_standardize_the_training_split() {
    let synth = generate_synthetic_cohort(60, &SignalSpec::default(), 5).unwrap();
    let train: Vec<ClinicalRecord> = synth
        .cohort
        .split(Split::Train)
        .into_iter()
        .map(|p| p.clinical.clone())
        .collect();
    let stats = fit_normalization(&train).unwrap();
    for col in [0, 2] {
        let v: Vec<f64> = train.iter().map(|r| encode_clinical(r, &stats)[col]).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() <= 1e-12, "column {col} mean {mean}");
        assert!((sd - 1.0).abs() <= 1e-12, "column {col} sd {sd}");
    }
}

#[test]
fn oracle_risk_is_strongly_concordant() {
    let synth = generate_synthetic_cohort(500, &SignalSpec::default(), 6).unwrap();
    for label in Label::ALL {
        let risks: Vec<f64> = synth.truth.patients.iter().map(|t| t.log_hazards[label.index()]).collect();
        let obs: Vec<Observed> = synth
            .cohort
            .patients
            .iter()
            .map(|p| p.outcome(label).unwrap().into())
            .collect();
        let c = concordance_index(&risks, &obs).unwrap();
        assert!(c >= 0.80, "{label}: oracle C-index {c}");
    }
}

#[test]
fn null_signal_has_chance_oracle() {
    let synth = generate_synthetic_cohort(200, &SignalSpec::null(), 6).unwrap();
    let first = synth.truth.patients[0].log_hazards;
    assert!(synth.truth.patients.iter().all(|t| t.log_hazards == first));
    let obs: Vec<Observed> = synth
        .cohort
        .patients
        .iter()
        .map(|p| p.outcome(Label::Os).unwrap().into())
        .collect();
    let risks = vec![first[0]; obs.len()];
    assert_eq!(concordance_index(&risks, &obs).unwrap(), 0.5);
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn event_times_shorten_with_hazard() {
    let spec = SignalSpec {
        censoring_rate: 0.0,
        ..SignalSpec::default()
    };
    let synth = generate_synthetic_cohort(1000, &spec, 7).unwrap();
    for label in Label::ALL {
        let hazard: Vec<f64> = synth.truth.patients.iter().map(|t| t.log_hazards[label.index()]).collect();
        let speed: Vec<f64> = synth
            .cohort
            .patients
            .iter()
            .map(|p| -p.outcome(label).unwrap().time)
            .collect();
        let rho = pearson(&ranks(&hazard), &ranks(&speed));
        assert!(rho > 0.0, "{label}: rank correlation {rho}");
    }
}

#[test]
fn tiny_cohorts_are_refused() {
    assert!(matches!(
        generate_synthetic_cohort(5, &SignalSpec::default(), 0),
        Err(Error::Config(_))
    ));
}

#[test]
fn modality_mapping_file_matches_codes() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("coding/treatment_modality.json");
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(doc["field"], "modality");
    let values = doc["values"].as_object().unwrap();
    assert_eq!(values.len(), TreatmentModality::ALL.len());
    for m in TreatmentModality::ALL {
        assert_eq!(values[m.token()].as_f64().unwrap(), m.code(), "{m}");
        assert_eq!(m.token().parse::<TreatmentModality>().unwrap(), *m);
    }
}
