use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::dataset::Sample;
use super::model::SurvivalModel;
use super::optim::{adamw_step, AdamW, AdamWState, ReduceOnPlateau};
use crate::data::augment;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    /// Rate used during this epoch.
    pub learning_rate: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: SurvivalModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best_validation_loss(&self) -> f64 {
        self.log[self.best_epoch - 1].validation_loss
    }
}

fn epoch_rng(seed: u64, epoch: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}

fn non_finite(model: &SurvivalModel, epoch: usize, batch: usize) -> Error {
    let (param, norm) = model
        .named_parameters()
        .into_iter()
        .map(|(n, p)| {
            let norm = p.value().norm();
            (n, if norm.is_nan() { f64::INFINITY } else { norm })
        })
        .fold((String::new(), f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    Error::NonFinite {
        epoch,
        batch,
        param,
        norm,
    }
}

/// Mini-batch AdamW on the mean multi-label loss with reduce-on-plateau
/// scheduling on the validation loss. Deterministic for a fixed
/// `config.seed`, augmentation included.
pub fn train(mut model: SurvivalModel, train: &[Sample], validation: &[Sample], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Data("training and validation cohorts must be non-empty".into()));
    }
    if config.label_weights.len() != model.config().labels {
        return Err(Error::Config(format!(
            "{} label weights for {} labels",
            config.label_weights.len(),
            model.config().labels
        )));
    }
    if let Some(s) = train.iter().chain(validation).find(|s| s.targets.len() < model.config().labels) {
        return Err(Error::Data(format!("patient {} lacks targets for some labels", s.id)));
    }

    let opt = AdamW {
        weight_decay: config.weight_decay,
        ..AdamW::default()
    };
    let mut state = AdamWState::default();
    let mut scheduler = ReduceOnPlateau::new(config.plateau_factor, config.plateau_patience);
    let mut lr = config.learning_rate;
    let val_refs: Vec<&Sample> = validation.iter().collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, SurvivalModel, usize)> = None;
    let start_epoch = model.epoch;

    for e in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut epoch_rng(config.seed, e, 0));
        let mut train_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let augmented: Vec<Sample>;
            let batch: Vec<&Sample> = if config.augment {
                augmented = chunk
                    .iter()
                    .map(|&i| {
                        let mut rng = epoch_rng(config.seed, e, 1 + i as u64);
                        let mut s = train[i].clone();
                        s.volume = augment(&s.volume, &config.augmentation, &mut rng)?;
                        Ok(s)
                    })
                    .collect::<Result<_>>()?;
                augmented.iter().collect()
            } else {
                chunk.iter().map(|&i| &train[i]).collect()
            };
            let (loss, grads) = model.loss_and_grad(&batch, &config.label_weights, config.beta)?;
            if !loss.is_finite() || grads.iter().any(|g| g.data().iter().any(|v| !v.is_finite())) {
                return Err(non_finite(&model, e, b + 1));
            }
            train_loss += loss * batch.len() as f64 / train.len() as f64;
            let mut params: Vec<_> = model.parameters_mut().into_iter().map(|p| p.value_mut()).collect();
            adamw_step(&mut params, &grads, &mut state, lr, &opt)?;
        }
        model.epoch = start_epoch + e;
        let validation_loss = model.loss(&val_refs, &config.label_weights, config.beta)?;
        if !validation_loss.is_finite() {
            return Err(non_finite(&model, e, 0));
        }
        log.push(EpochLog {
            epoch: e,
            train_loss,
            validation_loss,
            learning_rate: lr,
        });
        log::info!("epoch {e}: train {train_loss:.5} validation {validation_loss:.5} lr {lr:.2e}");
        if best.as_ref().is_none_or(|(l, _, _)| validation_loss < *l) {
            best = Some((validation_loss, model.clone(), e));
        }
        lr = scheduler.step(validation_loss, lr);
    }
    let (_, model, best_epoch) = best.expect("at least one epoch");
    Ok(TrainOutcome { model, log, best_epoch })
}
