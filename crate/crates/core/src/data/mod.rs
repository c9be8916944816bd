//! Clinical coding, volume preprocessing, augmentation, cohort I/O and the
//! synthetic cohort generator.

pub mod augment;
pub mod clinical;
pub mod cohort;
pub mod synth;
pub mod volume;

pub use augment::{augment, apply_transform, AugmentConfig, RigidTransform};
pub use clinical::{
    encode_clinical, fit_normalization, ClinicalRecord, NormalizationStats, CLINICAL_FEATURES,
};
pub use cohort::{load_cohort, write_cohort, Cohort, CohortManifest, LoadedCohort, Patient, Rejection, Split};
pub use synth::{generate_synthetic_cohort, GroundTruth, PatientTruth, SignalSpec, SyntheticCohort};
pub use volume::{preprocess_volume, read_volume, write_volume, ChannelRole, Grid3, VolumeHeader, VolumeSample};
