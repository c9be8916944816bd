//! Clinical variable parsing and numeric coding.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the coded clinical feature vector.
pub const CLINICAL_FEATURES: usize = 11;

/// Names of the coded features, in vector order.
pub const CLINICAL_FEATURE_NAMES: [&str; CLINICAL_FEATURES] = [
    "age_z",
    "sex",
    "cigarettes_z",
    "smoke_status",
    "ecog",
    "t_stage",
    "n_stage",
    "ajcc_stage",
    "hpv",
    "chemotherapy",
    "modality",
];

macro_rules! coded_enum {
    (
        $(#[$meta:meta])*
        $name:ident, $field:literal {
            $($variant:ident => $code:expr, [$($token:literal),+]);+ $(;)?
        }
    ) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            /// Numeric code used in the feature vector.
            pub fn code(self) -> f64 {
                match self {
                    $($name::$variant => $code),+
                }
            }

            /// Canonical CSV token.
            pub fn token(self) -> &'static str {
                match self {
                    $($name::$variant => [$($token),+][0]),+
                }
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                let t = s.trim();
                $(
                    if [$($token),+].iter().any(|tok: &&str| tok.eq_ignore_ascii_case(t)) {
                        return Ok($name::$variant);
                    }
                )+
                Err(Error::Data(format!("unknown value `{}` for field `{}`", s, $field)))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.token())
            }
        }
    };
}

coded_enum!(Sex, "sex" {
    Male => 1.0, ["male", "m"];
    Female => -1.0, ["female", "f"];
});

coded_enum!(
    /// Unknown status is coded at the midpoint.
    SmokeStatus, "smoke_status" {
    Current => -1.0, ["current", "current smoker"];
    Ex => 0.0, ["ex", "ex-smoker"];
    Non => 1.0, ["non", "non-smoker"];
    Unknown => 0.0, ["unknown"];
});

coded_enum!(Ecog, "ecog" {
    E0 => 0.0, ["0", "ECOG 0"];
    E1 => 1.0, ["1", "ECOG 1"];
    E2 => 2.0, ["2", "ECOG 2"];
    Above2 => 3.0, [">2", "3", "4", "ECOG >2"];
});

coded_enum!(TStage, "t_stage" {
    T0 => 0.0, ["T0"];
    T1 => 1.0, ["T1"];
    T2 => 2.0, ["T2"];
    T3 => 3.0, ["T3"];
    T4 => 4.0, ["T4"];
});

coded_enum!(NStage, "n_stage" {
    N0 => 0.0, ["N0"];
    N1 => 1.0, ["N1"];
    N2 => 2.0, ["N2"];
    N3 => 3.0, ["N3"];
});

coded_enum!(AjccStage, "ajcc_stage" {
    I => 1.0, ["I"];
    II => 2.0, ["II"];
    III => 3.0, ["III"];
    IVA => 4.0, ["IVA"];
    IVB => 5.0, ["IVB"];
    Unknown => 0.0, ["unknown"];
});

coded_enum!(HpvStatus, "hpv" {
    Positive => 1.0, ["positive"];
    Unknown => 0.0, ["unknown"];
    Negative => -1.0, ["negative"];
});

coded_enum!(Chemotherapy, "chemotherapy" {
    Yes => 1.0, ["yes"];
    No => -1.0, ["no"];
});

coded_enum!(
    /// Ordinal over treatment modality categories.
    TreatmentModality, "modality" {
    RtAlone => 0.0, ["RT alone"];
    ChemoRt => 1.0, ["ChemoRT"];
    RtEgfri => 2.0, ["RT+EGFRI"];
    PostopRt => 3.0, ["Postop RT"];
});

/// One patient's clinical variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClinicalRecord {
    pub patient_id: String,
    /// Years at diagnosis.
    pub age: f64,
    pub sex: Sex,
    /// Cigarettes per day times years smoked.
    pub cigarettes: f64,
    pub smoke_status: SmokeStatus,
    pub ecog: Ecog,
    pub t_stage: TStage,
    pub n_stage: NStage,
    pub ajcc_stage: AjccStage,
    pub hpv: HpvStatus,
    pub chemotherapy: Chemotherapy,
    pub modality: TreatmentModality,
}

/// CSV column names, in file order.
pub const CSV_COLUMNS: [&str; 12] = [
    "patient_id",
    "age",
    "sex",
    "cigarettes",
    "smoke_status",
    "ecog",
    "t_stage",
    "n_stage",
    "ajcc_stage",
    "hpv",
    "chemotherapy",
    "modality",
];

impl ClinicalRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.age.is_finite() && self.age > 0.0) {
            return Err(Error::Data(format!("{}: age must be positive, got {}", self.patient_id, self.age)));
        }
        if !(self.cigarettes.is_finite() && self.cigarettes >= 0.0) {
            return Err(Error::Data(format!(
                "{}: cigarette exposure must be non-negative, got {}",
                self.patient_id, self.cigarettes
            )));
        }
        Ok(())
    }

    /// Parses one CSV row given as `(column, cell)` lookups.
    pub fn from_fields(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let cell = |name: &str| -> Result<String> {
            match get(name) {
                Some(v) if !v.trim().is_empty() => Ok(v.trim().to_string()),
                _ => Err(Error::Data(format!("missing value for field `{name}`"))),
            }
        };
        let number = |name: &str| -> Result<f64> {
            let raw = cell(name)?;
            raw.parse::<f64>()
                .map_err(|_| Error::Data(format!("unknown value `{raw}` for field `{name}`")))
        };
        let rec = ClinicalRecord {
            patient_id: cell("patient_id")?,
            age: number("age")?,
            sex: cell("sex")?.parse()?,
            cigarettes: number("cigarettes")?,
            smoke_status: cell("smoke_status")?.parse()?,
            ecog: cell("ecog")?.parse()?,
            t_stage: cell("t_stage")?.parse()?,
            n_stage: cell("n_stage")?.parse()?,
            ajcc_stage: cell("ajcc_stage")?.parse()?,
            hpv: cell("hpv")?.parse()?,
            chemotherapy: cell("chemotherapy")?.parse()?,
            modality: cell("modality")?.parse()?,
        };
        rec.validate()?;
        Ok(rec)
    }

    /// Cells in [`CSV_COLUMNS`] order.
    pub fn to_fields(&self) -> [String; 12] {
        [
            self.patient_id.clone(),
            format!("{}", self.age),
            self.sex.token().into(),
            format!("{}", self.cigarettes),
            self.smoke_status.token().into(),
            self.ecog.token().into(),
            self.t_stage.token().into(),
            self.n_stage.token().into(),
            self.ajcc_stage.token().into(),
            self.hpv.token().into(),
            self.chemotherapy.token().into(),
            self.modality.token().into(),
        ]
    }
}

/// Training-split mean and sample standard deviation of the numeric fields.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub age_mean: f64,
    pub age_sd: f64,
    pub cigarettes_mean: f64,
    pub cigarettes_sd: f64,
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone, field: &str) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd > 0.0 && sd.is_finite() {
        (mean, sd)
    } else {
        log::warn!("{field}: zero spread in training records, using unit standard deviation");
        (mean, 1.0)
    }
}

pub fn fit_normalization(records: &[ClinicalRecord]) -> Result<NormalizationStats> {
    if records.len() < 2 {
        return Err(Error::Data(format!(
            "normalization needs at least 2 training records, got {}",
            records.len()
        )));
    }
    let (age_mean, age_sd) = mean_sd(records.iter().map(|r| r.age), "age");
    let (cigarettes_mean, cigarettes_sd) = mean_sd(records.iter().map(|r| r.cigarettes), "cigarettes");
    Ok(NormalizationStats {
        age_mean,
        age_sd,
        cigarettes_mean,
        cigarettes_sd,
    })
}

/// The 11-wide coded feature vector, in [`CLINICAL_FEATURE_NAMES`] order.
pub fn encode_clinical(record: &ClinicalRecord, stats: &NormalizationStats) -> [f64; CLINICAL_FEATURES] {
    [
        (record.age - stats.age_mean) / stats.age_sd,
        record.sex.code(),
        (record.cigarettes - stats.cigarettes_mean) / stats.cigarettes_sd,
        record.smoke_status.code(),
        record.ecog.code(),
        record.t_stage.code(),
        record.n_stage.code(),
        record.ajcc_stage.code(),
        record.hpv.code(),
        record.chemotherapy.code(),
        record.modality.code(),
    ]
}

#[cfg(test)]
pub(crate) fn sample_record(id: &str, age: f64) -> ClinicalRecord {
    ClinicalRecord {
        patient_id: id.into(),
        age,
        sex: Sex::Male,
        cigarettes: 20.0,
        smoke_status: SmokeStatus::Ex,
        ecog: Ecog::E1,
        t_stage: TStage::T2,
        n_stage: NStage::N2,
        ajcc_stage: AjccStage::IVA,
        hpv: HpvStatus::Positive,
        chemotherapy: Chemotherapy::Yes,
        modality: TreatmentModality::ChemoRt,
    }
}
