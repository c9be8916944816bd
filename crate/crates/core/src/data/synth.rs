//! Synthetic cohorts with known per-patient hazards.
//!
//! Each patient carries a latent risk built from one clinical variable (age)
//! and an image signal that sets the intensity of a Gaussian blob in the CT.
//! Every label's event time is exponential with log-hazard
//! `ln h0_s + γ_s·latent + σ·ε_s`, so labels share the latent risk and
//! differ by their own noise term. Censoring is independent and uniform.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Normal};
use serde::{Deserialize, Serialize};

use super::clinical::*;
use super::cohort::{Cohort, Patient, Split};
use super::volume::{Grid3, VolumeSample};
use crate::error::{Error, Result};
use crate::survival::{Label, OutcomeRecord};

/// Smallest cohort the generator will produce.
pub const MIN_PATIENTS: usize = 10;

/// Mean and sd of the generator's age distribution; the clinical signal is
/// age expressed in these units.
pub const AGE_MEAN: f64 = 62.0;
pub const AGE_SD: f64 = 11.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalSpec {
    pub extents: [usize; 3],
    pub spacing_mm: f64,
    /// Log-hazard per standard deviation of age.
    pub clinical_weight: f64,
    /// Log-hazard per standard deviation of the blob signal.
    pub image_weight: f64,
    /// `γ_s` per label.
    pub label_coefficients: [f64; 4],
    /// `h0_s` per label, events per year.
    pub baseline_hazards: [f64; 4],
    /// `σ` of the per-label log-hazard noise.
    pub label_noise_sd: f64,
    /// Censoring times are uniform on `(0, 1/rate)` years; `0` disables
    /// censoring.
    pub censoring_rate: f64,
    pub background_hu: f64,
    pub noise_hu: f64,
    /// Blob peak intensity at zero signal, HU above background.
    pub blob_amplitude_hu: f64,
    /// Change of peak intensity per signal standard deviation, HU.
    pub blob_amplitude_per_sd: f64,
    /// Gaussian width of the blob, voxels.
    pub blob_sigma_vox: f64,
    /// GTV mask radius around the blob centre, voxels.
    pub mask_radius_vox: f64,
    /// Nominal blob centre as a fraction of each extent.
    pub blob_center: [f64; 3],
    /// Uniform jitter of the blob centre, voxels per axis.
    pub blob_jitter_vox: f64,
    /// Fractions assigned to train and validation; the rest is test.
    pub train_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self {
            extents: [16, 16, 16],
            spacing_mm: 1.0,
            clinical_weight: 1.2,
            image_weight: 1.2,
            label_coefficients: [1.0; 4],
            baseline_hazards: [0.25, 0.15, 0.1, 0.12],
            label_noise_sd: 0.25,
            censoring_rate: 1.0 / 6.0,
            background_hu: 40.0,
            noise_hu: 40.0,
            blob_amplitude_hu: 300.0,
            blob_amplitude_per_sd: 120.0,
            blob_sigma_vox: 1.6,
            mask_radius_vox: 2.5,
            blob_center: [0.5; 3],
            blob_jitter_vox: 2.0,
            train_fraction: 0.6,
            validation_fraction: 0.2,
        }
    }
}

impl SignalSpec {
    /// No prognostic signal at all: every patient has the same hazards.
    pub fn null() -> Self {
        Self {
            clinical_weight: 0.0,
            image_weight: 0.0,
            label_noise_sd: 0.0,
            ..Self::default()
        }
    }
}

/// Generator-side truth for one patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientTruth {
    pub id: String,
    /// Age in generator standard units.
    pub clinical_signal: f64,
    pub image_signal: f64,
    pub latent_risk: f64,
    /// True log-hazard per label, [`Label::ALL`] order.
    pub log_hazards: [f64; 4],
    /// Blob centre, voxel coordinates of the generated volume.
    pub blob_center: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SignalSpec,
    pub seed: u64,
    pub patients: Vec<PatientTruth>,
}

impl GroundTruth {
    pub fn find(&self, id: &str) -> Option<&PatientTruth> {
        self.patients.iter().find(|p| p.id == id)
    }

    /// True log-hazards of `label` for the given patient ids.
    pub fn oracle_risks(&self, label: Label, ids: &[&str]) -> Option<Vec<f64>> {
        ids.iter()
            .map(|id| self.find(id).map(|p| p.log_hazards[label.index()]))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCohort {
    pub cohort: Cohort,
    pub truth: GroundTruth,
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T], weights: &[f64]) -> T {
    let dist = WeightedIndex::new(weights).expect("static weights");
    items[dist.sample(rng)]
}

fn draw_clinical(id: &str, rng: &mut ChaCha8Rng) -> ClinicalRecord {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let age = (AGE_MEAN + AGE_SD * normal.sample(rng)).max(18.0);
    let cigarettes = if rng.gen_bool(0.4) {
        0.0
    } else {
        (30f64.ln() + 0.6 * normal.sample(rng)).exp()
    };
    ClinicalRecord {
        patient_id: id.to_string(),
        age,
        sex: pick(rng, &[Sex::Male, Sex::Female], &[0.8, 0.2]),
        cigarettes,
        smoke_status: pick(
            rng,
            SmokeStatus::ALL,
            &[0.30, 0.40, 0.27, 0.03],
        ),
        ecog: pick(rng, Ecog::ALL, &[0.62, 0.27, 0.08, 0.03]),
        t_stage: pick(rng, TStage::ALL, &[0.02, 0.21, 0.28, 0.29, 0.20]),
        n_stage: pick(rng, NStage::ALL, &[0.39, 0.09, 0.46, 0.06]),
        ajcc_stage: pick(rng, AjccStage::ALL, &[0.12, 0.13, 0.20, 0.45, 0.09, 0.01]),
        hpv: pick(rng, HpvStatus::ALL, &[0.37, 0.50, 0.13]),
        chemotherapy: pick(rng, Chemotherapy::ALL, &[0.4, 0.6]),
        modality: pick(rng, TreatmentModality::ALL, &[0.5, 0.4, 0.05, 0.05]),
    }
}

fn draw_volume(id: &str, spec: &SignalSpec, image_signal: f64, rng: &mut ChaCha8Rng) -> (VolumeSample, [f64; 3]) {
    let ext = spec.extents;
    let centre: [f64; 3] = [0, 1, 2].map(|a| {
        let nominal = spec.blob_center[a] * (ext[a] as f64 - 1.0);
        let j = if spec.blob_jitter_vox > 0.0 {
            rng.gen_range(-spec.blob_jitter_vox..=spec.blob_jitter_vox)
        } else {
            0.0
        };
        (nominal + j).clamp(0.0, ext[a] as f64 - 1.0)
    });
    let amplitude = (spec.blob_amplitude_hu + spec.blob_amplitude_per_sd * image_signal).max(0.0);
    let noise = Normal::new(0.0, spec.noise_hu.max(0.0)).expect("finite sd");
    let two_s2 = 2.0 * spec.blob_sigma_vox * spec.blob_sigma_vox;
    let r2_mask = spec.mask_radius_vox * spec.mask_radius_vox;
    let mut ct = Grid3::filled(ext, 0.0);
    let mut mask = Grid3::filled(ext, 0.0);
    for x in 0..ext[0] {
        for y in 0..ext[1] {
            for z in 0..ext[2] {
                let d2 = (x as f64 - centre[0]).powi(2) + (y as f64 - centre[1]).powi(2) + (z as f64 - centre[2]).powi(2);
                let hu = spec.background_hu + amplitude * (-d2 / two_s2).exp() + noise.sample(rng);
                ct.set(x, y, z, hu as f32);
                if d2 <= r2_mask {
                    mask.set(x, y, z, 1.0);
                }
            }
        }
    }
    // always keep at least the nearest voxel so the mask is never empty
    let n = centre.map(|c| c.round() as usize);
    mask.set(n[0], n[1], n[2], 1.0);
    (
        VolumeSample {
            patient_id: id.to_string(),
            ct,
            mask,
            spacing: [spec.spacing_mm; 3],
        },
        centre,
    )
}

pub fn generate_synthetic_cohort(n: usize, spec: &SignalSpec, seed: u64) -> Result<SyntheticCohort> {
    if n < MIN_PATIENTS {
        return Err(Error::Config(format!(
            "synthetic cohorts need at least {MIN_PATIENTS} patients, got {n}"
        )));
    }
    if spec.extents.contains(&0) || spec.censoring_rate < 0.0 {
        return Err(Error::Config("synthetic spec needs positive extents and a non-negative censoring rate".into()));
    }
    if spec.baseline_hazards.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::Config("baseline hazards must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n_train = (spec.train_fraction * n as f64).round() as usize;
    let n_val = (spec.validation_fraction * n as f64).round() as usize;

    let mut patients = Vec::with_capacity(n);
    let mut truths = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("p{i:04}");
        let clinical = draw_clinical(&id, &mut rng);
        let clinical_signal = (clinical.age - AGE_MEAN) / AGE_SD;
        let image_signal: f64 = normal.sample(&mut rng);
        let latent = spec.clinical_weight * clinical_signal + spec.image_weight * image_signal;
        let (volume, blob_center) = draw_volume(&id, spec, image_signal, &mut rng);

        let mut log_hazards = [0.0; 4];
        let mut outcomes = Vec::with_capacity(4);
        for label in Label::ALL {
            let s = label.index();
            let eta = spec.baseline_hazards[s].ln()
                + spec.label_coefficients[s] * latent
                + spec.label_noise_sd * normal.sample(&mut rng);
            log_hazards[s] = eta;
            let t_event = Exp::new(eta.exp()).expect("positive rate").sample(&mut rng);
            let t_censor = if spec.censoring_rate > 0.0 {
                rng.gen_range(0.0..1.0 / spec.censoring_rate)
            } else {
                f64::INFINITY
            };
            let (time, event) = if t_event <= t_censor {
                (t_event, true)
            } else {
                (t_censor, false)
            };
            outcomes.push(OutcomeRecord::new(label, time.max(1e-6), event)?);
        }

        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
        truths.push(PatientTruth {
            id: id.clone(),
            clinical_signal,
            image_signal,
            latent_risk: latent,
            log_hazards,
            blob_center,
        });
        patients.push(Patient {
            id,
            split,
            clinical,
            volume,
            outcomes,
        });
    }
    Ok(SyntheticCohort {
        cohort: Cohort { patients },
        truth: GroundTruth {
            spec: spec.clone(),
            seed,
            patients: truths,
        },
    })
}
