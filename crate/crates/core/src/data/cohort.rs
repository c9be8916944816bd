//! In-memory cohorts and the on-disk manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::clinical::{ClinicalRecord, CSV_COLUMNS};
use super::volume::{read_volume, write_volume, ChannelRole, VolumeSample};
use crate::error::{Error, Result};
use crate::survival::{Label, OutcomeRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patient {
    pub id: String,
    pub split: Split,
    pub clinical: ClinicalRecord,
    pub volume: VolumeSample,
    /// One record per label, in [`Label::ALL`] order.
    pub outcomes: Vec<OutcomeRecord>,
}

impl Patient {
    pub fn outcome(&self, label: Label) -> Option<&OutcomeRecord> {
        self.outcomes.iter().find(|o| o.label == label)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Cohort {
    pub patients: Vec<Patient>,
}

impl Cohort {
    pub fn split(&self, split: Split) -> Vec<&Patient> {
        self.patients.iter().filter(|p| p.split == split).collect()
    }

    pub fn find(&self, id: &str) -> Option<&Patient> {
        self.patients.iter().find(|p| p.id == id)
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeEntry {
    pub time_years: f64,
    pub event: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestPatient {
    pub id: String,
    pub split: Split,
    /// 0-based data row in the clinical CSV.
    pub clinical_row: usize,
    pub ct_path: String,
    pub mask_path: String,
    /// Keyed by label name (`os`, `lffs`, `rffs`, `dffs`).
    pub outcomes: BTreeMap<Label, OutcomeEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortManifest {
    /// Clinical CSV, relative to the manifest.
    pub clinical_csv: String,
    pub patients: Vec<ManifestPatient>,
}

/// A patient dropped at load time and why.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Rejection {
    pub patient_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct LoadedCohort {
    pub cohort: Cohort,
    pub rejected: Vec<Rejection>,
}

/// Writes `manifest.json`, `clinical.csv` and one header+raw pair per
/// volume under `dir`. Returns the manifest path.
pub fn write_cohort(cohort: &Cohort, dir: &Path) -> Result<PathBuf> {
    let vol_dir = dir.join("volumes");
    fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;

    let csv_path = dir.join("clinical.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Csv {
        path: csv_path.clone(),
        source: e,
    })?;
    let csv_err = |e| Error::Csv {
        path: csv_path.clone(),
        source: e,
    };
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;

    let mut manifest = CohortManifest {
        clinical_csv: "clinical.csv".into(),
        patients: Vec::with_capacity(cohort.len()),
    };
    for (row, p) in cohort.patients.iter().enumerate() {
        w.write_record(p.clinical.to_fields()).map_err(csv_err)?;
        let spacing = p.volume.spacing;
        write_volume(&vol_dir.join(format!("{}_ct", p.id)), &p.volume.ct, spacing, ChannelRole::Ct)?;
        write_volume(&vol_dir.join(format!("{}_mask", p.id)), &p.volume.mask, spacing, ChannelRole::Mask)?;
        manifest.patients.push(ManifestPatient {
            id: p.id.clone(),
            split: p.split,
            clinical_row: row,
            ct_path: format!("volumes/{}_ct.json", p.id),
            mask_path: format!("volumes/{}_mask.json", p.id),
            outcomes: p
                .outcomes
                .iter()
                .map(|o| {
                    (
                        o.label,
                        OutcomeEntry {
                            time_years: o.time,
                            event: o.event,
                        },
                    )
                })
                .collect(),
        });
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&manifest_path, e))?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

pub fn read_manifest(path: &Path) -> Result<CohortManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Loads and validates a cohort. Patients with missing or unparseable
/// clinical or outcome fields are rejected and reported; missing files and
/// extent mismatches are errors.
pub fn load_cohort(manifest_path: &Path) -> Result<LoadedCohort> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = LoadedCohort::default();
    if manifest.patients.is_empty() {
        return Ok(out);
    }

    let csv_path = base.join(&manifest.clinical_csv);
    let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| Error::Csv {
        path: csv_path.clone(),
        source: e,
    })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: csv_path.clone(),
            source: e,
        })?
        .clone();
    let rows: Vec<csv::StringRecord> = reader
        .records()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Csv {
            path: csv_path.clone(),
            source: e,
        })?;

    for mp in &manifest.patients {
        let row = rows.get(mp.clinical_row).ok_or_else(|| {
            Error::Data(format!(
                "patient {}: clinical row {} not present in {}",
                mp.id,
                mp.clinical_row,
                csv_path.display()
            ))
        })?;
        let clinical = match ClinicalRecord::from_fields(|name| {
            headers
                .iter()
                .position(|h| h == name)
                .and_then(|i| row.get(i))
                .map(str::to_string)
        }) {
            Ok(c) if c.patient_id == mp.id => c,
            Ok(c) => {
                return Err(Error::Data(format!(
                    "patient {}: clinical row {} belongs to {}",
                    mp.id, mp.clinical_row, c.patient_id
                )))
            }
            Err(e) => {
                out.rejected.push(Rejection {
                    patient_id: mp.id.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
        };

        let mut outcomes = Vec::with_capacity(Label::ALL.len());
        let mut reason = None;
        for label in Label::ALL {
            match mp.outcomes.get(&label) {
                Some(e) => match OutcomeRecord::new(label, e.time_years, e.event) {
                    Ok(o) => outcomes.push(o),
                    Err(err) => reason = Some(err.to_string()),
                },
                None => reason = Some(format!("missing outcome for label {label}")),
            }
        }
        if let Some(reason) = reason {
            out.rejected.push(Rejection {
                patient_id: mp.id.clone(),
                reason,
            });
            continue;
        }

        let named = |e: Error| Error::Data(format!("patient {}: {e}", mp.id));
        let (ct, ct_header) = read_volume(&base.join(&mp.ct_path)).map_err(named)?;
        let (mask, _) = read_volume(&base.join(&mp.mask_path)).map_err(named)?;
        let volume = VolumeSample {
            patient_id: mp.id.clone(),
            ct,
            mask,
            spacing: ct_header.spacing_mm,
        };
        volume.validate().map_err(named)?;
        out.cohort.patients.push(Patient {
            id: mp.id.clone(),
            split: mp.split,
            clinical,
            volume,
            outcomes,
        });
    }
    Ok(out)
}
