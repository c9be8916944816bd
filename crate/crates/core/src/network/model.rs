use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::config::{EncoderConfig, Modality};
use super::dataset::Sample;
use crate::autodiff::{cumulative_scores, Parameter, Tape, Tensor, Var};
use crate::data::NormalizationStats;
use crate::error::{Error, Result};
use crate::mtlr::{MtlrHead, PredictedCurve};
use crate::survival::{Label, TimeGrid};

#[derive(Clone, Debug)]
pub(crate) struct Layer {
    pub weight: Parameter,
    pub bias: Parameter,
}

/// Conv encoder, fusion layer and one MTLR head per label.
///
/// `fused = relu(W_fc·(clinical ∥ avgpool(conv(volume))) + b_fc)` and head `s`
/// emits the `K-1` logits `θ_s·fused + b_s`.
#[derive(Clone, Debug)]
pub struct SurvivalModel {
    pub(crate) config: EncoderConfig,
    pub(crate) grid: TimeGrid,
    pub(crate) normalization: Option<NormalizationStats>,
    pub(crate) conv: Vec<Layer>,
    pub(crate) fc: Layer,
    pub(crate) heads: Vec<Layer>,
    pub(crate) epoch: usize,
}

/// Everything recorded by one forward pass.
#[derive(Debug)]
pub struct ForwardPass {
    pub tape: Tape,
    pub volume: Var,
    pub clinical: Var,
    /// Rectified output of the last conv layer.
    pub last_conv: Var,
    pub fused: Var,
    /// Per-label MTLR logits, `K-1` each.
    pub logits: Vec<Var>,
}

impl ForwardPass {
    pub fn curves(&self) -> Vec<PredictedCurve> {
        self.logits
            .iter()
            .map(|&l| PredictedCurve::from_scores(&cumulative_scores(self.tape.value(l).data())))
            .collect()
    }
}

fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

impl SurvivalModel {
    /// Fresh model. Conv and fusion weights are He-uniform from
    /// `config.seed`; biases and all MTLR parameters start at zero, so the
    /// untrained model predicts a uniform PMF.
    pub fn new(config: EncoderConfig, grid: TimeGrid) -> Result<Self> {
        config.validate()?;
        if grid.intervals() != config.intervals {
            return Err(Error::Config(format!(
                "time grid has {} intervals, encoder expects {}",
                grid.intervals(),
                config.intervals
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut conv = Vec::with_capacity(config.conv.len());
        let mut c_in = config.volume_channels;
        for spec in &config.conv {
            let shape = [spec.channels, c_in, spec.kernel, spec.kernel, spec.kernel];
            let fan_in = c_in * spec.kernel.pow(3);
            conv.push(Layer {
                weight: Parameter::new(he_uniform(&shape, fan_in, &mut rng)),
                bias: Parameter::new(Tensor::zeros(&[spec.channels])),
            });
            c_in = spec.channels;
        }
        let d_in = config.clinical_features + config.image_features();
        let fc = Layer {
            weight: Parameter::new(he_uniform(&[d_in, config.fc_width], d_in, &mut rng)),
            bias: Parameter::new(Tensor::zeros(&[config.fc_width])),
        };
        let m = config.intervals - 1;
        let heads = (0..config.labels)
            .map(|_| Layer {
                weight: Parameter::new(Tensor::zeros(&[config.fc_width, m])),
                bias: Parameter::new(Tensor::zeros(&[m])),
            })
            .collect();
        Ok(Self {
            config,
            grid,
            normalization: None,
            conv,
            fc,
            heads,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn normalization(&self) -> Option<&NormalizationStats> {
        self.normalization.as_ref()
    }

    pub fn set_normalization(&mut self, stats: NormalizationStats) {
        self.normalization = Some(stats);
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn set_modality(&mut self, modality: Modality) {
        self.config.modality = modality;
    }

    fn label_name(&self, s: usize) -> String {
        Label::from_index(s).map_or_else(|| format!("label{s}"), |l| l.name().to_string())
    }

    /// Parameters with stable names, in checkpoint order.
    pub fn named_parameters(&self) -> Vec<(String, &Parameter)> {
        let mut out = Vec::new();
        for (i, l) in self.conv.iter().enumerate() {
            out.push((format!("conv{}.weight", i + 1), &l.weight));
            out.push((format!("conv{}.bias", i + 1), &l.bias));
        }
        out.push(("fc.weight".into(), &self.fc.weight));
        out.push(("fc.bias".into(), &self.fc.bias));
        for (s, h) in self.heads.iter().enumerate() {
            let name = self.label_name(s);
            out.push((format!("head.{name}.weight"), &h.weight));
            out.push((format!("head.{name}.bias"), &h.bias));
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        for l in &mut self.conv {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.fc.weight);
        out.push(&mut self.fc.bias);
        for h in &mut self.heads {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out
    }

    /// Parameter by its [`Self::named_parameters`] name.
    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        let i = self.named_parameters().iter().position(|(n, _)| n == name)?;
        self.parameters_mut().into_iter().nth(i)
    }

    pub fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, p)| p.value().len()).sum()
    }

    /// Head `s` as a plain MTLR head over the fused features.
    pub fn head(&self, s: usize) -> MtlrHead {
        let h = &self.heads[s];
        MtlrHead::new(
            self.config.fc_width,
            self.config.intervals,
            h.weight.value().data().to_vec(),
            h.bias.value().data().to_vec(),
        )
        .expect("head shapes follow config")
    }

    pub fn forward_pass(&self, volume: &Tensor, clinical: &Tensor) -> Result<ForwardPass> {
        let c = &self.config;
        let [x, y, z] = c.volume_extents;
        if volume.shape() != [c.volume_channels, x, y, z] {
            return Err(Error::Config(format!(
                "volume shape {:?} does not match encoder input {:?}",
                volume.shape(),
                [c.volume_channels, x, y, z]
            )));
        }
        if clinical.shape() != [c.clinical_features] {
            return Err(Error::Config(format!(
                "clinical vector shape {:?} does not match width {}",
                clinical.shape(),
                c.clinical_features
            )));
        }
        let mut tape = Tape::new();
        let vol = tape.input(volume.clone());
        let clin = tape.input(clinical.clone());
        let mut h = vol;
        for (layer, spec) in self.conv.iter().zip(&c.conv) {
            let w = tape.param(&layer.weight);
            let b = tape.param(&layer.bias);
            let pre = tape.conv3d(h, w, b, spec.stride, spec.padding)?;
            h = tape.relu(pre);
        }
        let last_conv = h;
        let mut image = tape.global_avg_pool(last_conv)?;
        let mut clin_in = clin;
        match c.modality {
            Modality::Multimodal => {}
            Modality::ClinicalOnly => image = tape.scale(image, 0.0),
            Modality::ImageOnly => clin_in = tape.scale(clin, 0.0),
        }
        let cat = tape.concat(clin_in, image)?;
        let fw = tape.param(&self.fc.weight);
        let fb = tape.param(&self.fc.bias);
        let pre = tape.dense(cat, fw, fb)?;
        let fused = tape.relu(pre);
        let logits = self
            .heads
            .iter()
            .map(|head| {
                let w = tape.param(&head.weight);
                let b = tape.param(&head.bias);
                tape.dense(fused, w, b)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ForwardPass {
            tape,
            volume: vol,
            clinical: clin,
            last_conv,
            fused,
            logits,
        })
    }

    /// Per-label predicted curves plus the recorded pass.
    pub fn forward(&self, volume: &Tensor, clinical: &Tensor) -> Result<(Vec<PredictedCurve>, ForwardPass)> {
        let pass = self.forward_pass(volume, clinical)?;
        Ok((pass.curves(), pass))
    }

    pub fn predict(&self, sample: &Sample) -> Result<Vec<PredictedCurve>> {
        Ok(self.forward_pass(&sample.volume, &sample.clinical)?.curves())
    }

    /// `(β/2)·Σ_s ‖θ_s‖²`.
    pub fn regularizer(&self, beta: f64) -> f64 {
        0.5 * beta * self.heads.iter().map(|h| h.weight.value().norm().powi(2)).sum::<f64>()
    }

    /// Records the weighted negative log-likelihood of one sample on its
    /// forward tape: `-Σ_s λ_s · loglik_s`.
    pub(crate) fn sample_nll(&self, pass: &mut ForwardPass, sample: &Sample, label_weights: &[f64]) -> Result<Option<Var>> {
        if label_weights.len() != self.heads.len() {
            return Err(Error::Config(format!(
                "{} label weights for {} heads",
                label_weights.len(),
                self.heads.len()
            )));
        }
        let k = self.config.intervals;
        let mut total: Option<Var> = None;
        for (s, &lambda) in label_weights.iter().enumerate() {
            if lambda == 0.0 {
                continue;
            }
            let target = sample.targets.get(s).ok_or_else(|| {
                Error::Data(format!("patient {} has no target for label {}", sample.id, self.label_name(s)))
            })?;
            let (first, last) = target.admissible(k);
            let ll = pass.tape.interval_log_prob(pass.logits[s], first, last)?;
            let term = pass.tape.scale(ll, -lambda);
            total = Some(match total {
                Some(t) => pass.tape.add(t, term)?,
                None => term,
            });
        }
        Ok(total)
    }

    /// Mean multi-label loss over `samples` and its gradient for every
    /// parameter, in [`Self::named_parameters`] order.
    pub fn loss_and_grad(&self, samples: &[&Sample], label_weights: &[f64], beta: f64) -> Result<(f64, Vec<Tensor>)> {
        use rayon::prelude::*;
        if samples.is_empty() {
            return Err(Error::Data("loss over an empty batch".into()));
        }
        let per_sample: Vec<Result<(f64, Vec<Option<Tensor>>)>> = samples
            .par_iter()
            .map(|s| {
                let mut pass = self.forward_pass(&s.volume, &s.clinical)?;
                let Some(nll) = self.sample_nll(&mut pass, s, label_weights)? else {
                    return Ok((0.0, Vec::new()));
                };
                let value = pass.tape.value(nll).data()[0];
                let grads = pass.tape.backward(nll)?;
                let g = self
                    .named_parameters()
                    .iter()
                    .map(|(_, p)| grads.param(p.id()))
                    .collect();
                Ok((value, g))
            })
            .collect();

        let r = samples.len() as f64;
        let named = self.named_parameters();
        let mut total: Vec<Tensor> = named.iter().map(|(_, p)| Tensor::zeros(p.value().shape())).collect();
        let mut loss = 0.0;
        for item in per_sample {
            let (value, grads) = item?;
            loss += value / r;
            for (acc, g) in total.iter_mut().zip(grads) {
                if let Some(g) = g {
                    acc.add_scaled(&g, 1.0 / r);
                }
            }
        }
        loss += self.regularizer(beta);
        let head_start = named.len() - 2 * self.heads.len();
        for (s, head) in self.heads.iter().enumerate() {
            total[head_start + 2 * s].add_scaled(head.weight.value(), beta);
        }
        Ok((loss, total))
    }

    /// Mean multi-label loss without gradients.
    pub fn loss(&self, samples: &[&Sample], label_weights: &[f64], beta: f64) -> Result<f64> {
        use rayon::prelude::*;
        if samples.is_empty() {
            return Err(Error::Data("loss over an empty cohort".into()));
        }
        let values: Vec<Result<f64>> = samples
            .par_iter()
            .map(|s| {
                let mut pass = self.forward_pass(&s.volume, &s.clinical)?;
                Ok(match self.sample_nll(&mut pass, s, label_weights)? {
                    Some(v) => pass.tape.value(v).data()[0],
                    None => 0.0,
                })
            })
            .collect();
        let r = samples.len() as f64;
        let mut loss = 0.0;
        for v in values {
            loss += v? / r;
        }
        Ok(loss + self.regularizer(beta))
    }
}
