//! The survival network: a 3D conv encoder whose pooled features are
//! concatenated with the clinical vector, passed through one fully
//! connected layer and fed to one MTLR head per label. Training, the
//! optimizer and checkpoints live here too.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod model;
pub mod optim;
pub mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_into, save_checkpoint};
pub use config::{ConvSpec, EncoderConfig, Modality, TrainConfig};
pub use dataset::{fit_clinical_normalization, fit_time_grid, prepare_samples, Sample};
pub use model::{ForwardPass, SurvivalModel};
pub use optim::{adamw_step, AdamW, AdamWState, ReduceOnPlateau};
pub use train::{train, EpochLog, TrainOutcome};
