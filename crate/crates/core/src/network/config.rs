use serde::{Deserialize, Serialize};

use crate::data::augment::AugmentConfig;
use crate::data::CLINICAL_FEATURES;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Which input branches feed the fusion layer. Absent branches are zeroed,
/// so every variant has the same parameter shapes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    #[default]
    Multimodal,
    ClinicalOnly,
    ImageOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub conv: Vec<ConvSpec>,
    /// Width of the fused fully connected layer.
    pub fc_width: usize,
    /// Model input extents `[X, Y, Z]` (the crop size).
    pub volume_extents: [usize; 3],
    /// Input channels of the volume (CT, mask).
    pub volume_channels: usize,
    pub clinical_features: usize,
    pub labels: usize,
    /// Number of time intervals `K`.
    pub intervals: usize,
    pub modality: Modality,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            conv: [8, 16, 32, 64]
                .into_iter()
                .map(|channels| ConvSpec {
                    channels,
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                })
                .collect(),
            fc_width: 64,
            volume_extents: [16, 16, 8],
            volume_channels: 2,
            clinical_features: CLINICAL_FEATURES,
            labels: 4,
            intervals: 16,
            modality: Modality::Multimodal,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// Spatial extents after each conv layer.
    pub fn conv_extents(&self) -> Result<Vec<[usize; 3]>> {
        let mut ext = self.volume_extents;
        let mut out = Vec::with_capacity(self.conv.len());
        for (i, c) in self.conv.iter().enumerate() {
            for e in ext.iter_mut() {
                let padded = *e + 2 * c.padding;
                if c.stride == 0 || padded < c.kernel {
                    return Err(Error::Config(format!("conv layer {} leaves no output voxels", i + 1)));
                }
                *e = (padded - c.kernel) / c.stride + 1;
            }
            out.push(ext);
        }
        Ok(out)
    }

    /// Width of the image feature block after pooling.
    pub fn image_features(&self) -> usize {
        self.conv.last().map_or(self.volume_channels, |c| c.channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv.is_empty() {
            return Err(Error::Config("encoder needs at least one conv layer".into()));
        }
        if self.conv.iter().any(|c| c.channels == 0 || c.kernel % 2 == 0 || c.stride == 0) {
            return Err(Error::Config("conv layers need positive channels and stride and an odd kernel".into()));
        }
        if self.volume_extents.contains(&0) || self.volume_channels == 0 {
            return Err(Error::Config("volume extents and channels must be positive".into()));
        }
        if self.fc_width == 0 || self.labels == 0 || self.intervals < 2 {
            return Err(Error::Config("fc width and label count must be positive, K >= 2".into()));
        }
        self.conv_extents()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Multiplier applied to the learning rate on a validation plateau.
    pub plateau_factor: f64,
    /// Epochs without validation improvement before the rate is reduced.
    pub plateau_patience: usize,
    pub weight_decay: f64,
    /// `λ_s`; a zero entry removes that label's likelihood term.
    pub label_weights: Vec<f64>,
    /// L2 strength on MTLR head weights.
    pub beta: f64,
    pub augment: bool,
    pub augmentation: AugmentConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 100,
            plateau_factor: 0.1,
            plateau_patience: 10,
            weight_decay: 0.01,
            label_weights: vec![1.0; 4],
            beta: 1.0,
            augment: false,
            augmentation: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("learning rate must be non-negative; batch size and epochs positive".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::Config(format!("plateau factor must lie in (0, 1), got {}", self.plateau_factor)));
        }
        if self.label_weights.iter().any(|l| !(*l >= 0.0)) || !(self.beta >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("label weights, beta and weight decay must be non-negative".into()));
        }
        Ok(())
    }
}
