//! Time-event activation maps.
//!
//! For a chosen label and interval the model's guidance score is
//! backpropagated twice: once normally, to weight the last conv layer's
//! channels Grad-CAM style, and once with the guided ReLU rule, to get an
//! input-resolution gradient. The coarse map is upsampled and multiplied with
//! the absolute guided gradient.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{ReluRule, Tensor, Var};
use crate::data::{write_volume, ChannelRole, Grid3};
use crate::error::{Error, Result};
use crate::network::{ForwardPass, SurvivalModel};
use crate::survival::{legal_sequence, Label};

/// The scalar that is backpropagated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// `⟨bits, logits⟩`, the unnormalized sequence score.
    #[default]
    Logit,
    /// Log-probability of the chosen interval.
    LogPmf,
}

/// Label and interval of interest with the matching target bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GuidanceVector {
    pub label: usize,
    /// 1-based interval, `1..=K`.
    pub interval: usize,
    pub bits: Vec<u8>,
}

impl GuidanceVector {
    pub fn new(label: usize, interval: usize, intervals: usize, labels: usize) -> Result<Self> {
        if label >= labels {
            return Err(Error::Usage(format!("label index {label} outside 0..{labels}")));
        }
        if interval == 0 || interval > intervals {
            return Err(Error::Usage(format!("interval {interval} outside 1..={intervals}")));
        }
        Ok(Self {
            label,
            interval,
            bits: legal_sequence(interval, intervals),
        })
    }

    pub fn for_model(model: &SurvivalModel, label: Label, interval: usize) -> Result<Self> {
        let c = model.config();
        Self::new(label.index(), interval, c.intervals, c.labels)
    }
}

/// Non-negative map on the last conv layer's grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseMap {
    pub extents: [usize; 3],
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMap {
    pub patient_id: String,
    pub label: usize,
    pub interval: usize,
    pub extents: [usize; 3],
    /// Min-max scaled to `[0, 1]`.
    pub values: Vec<f64>,
    /// Product before scaling.
    pub raw: Vec<f64>,
}

impl ActivationMap {
    pub fn to_grid(&self) -> Grid3 {
        Grid3::new(self.extents, self.values.iter().map(|&v| v as f32).collect()).expect("extents match values")
    }
}

/// Runs the model and records the guidance score on its tape.
pub fn guidance_score(
    model: &SurvivalModel,
    volume: &Tensor,
    clinical: &Tensor,
    guidance: &GuidanceVector,
    mode: ScoreMode,
) -> Result<(f64, ForwardPass, Var)> {
    let c = model.config();
    if guidance.label >= c.labels || guidance.bits.len() != c.intervals - 1 {
        return Err(Error::Usage(format!(
            "guidance for label {} with {} bits does not fit a model with {} labels and K = {}",
            guidance.label,
            guidance.bits.len(),
            c.labels,
            c.intervals
        )));
    }
    let mut pass = model.forward_pass(volume, clinical)?;
    let logits = pass.logits[guidance.label];
    let score = match mode {
        ScoreMode::Logit => {
            let w = guidance.bits.iter().map(|&b| b as f64).collect();
            pass.tape.weighted_sum(logits, w)?
        }
        ScoreMode::LogPmf => pass.tape.interval_log_prob(logits, guidance.interval, guidance.interval)?,
    };
    Ok((pass.tape.value(score).data()[0], pass, score))
}

/// `ReLU(Σ_c α_c·A_c)` with `α_c` the spatial mean of the score gradient
/// over channel `c` of the last rectified conv output.
pub fn grad_weighted_map(pass: &ForwardPass, score: Var) -> Result<CoarseMap> {
    let grads = pass.tape.backward(score)?;
    let act = pass.tape.value(pass.last_conv);
    let shape = act.shape();
    let (channels, extents) = (shape[0], [shape[1], shape[2], shape[3]]);
    let n: usize = extents.iter().product();
    let zeros = Tensor::zeros(shape);
    let g = grads.get(pass.last_conv).unwrap_or(&zeros);
    let mut values = vec![0.0; n];
    for c in 0..channels {
        let gc = &g.data()[c * n..(c + 1) * n];
        let alpha = gc.iter().sum::<f64>() / n as f64;
        if alpha == 0.0 {
            continue;
        }
        for (v, a) in values.iter_mut().zip(&act.data()[c * n..(c + 1) * n]) {
            *v += alpha * a;
        }
    }
    for v in &mut values {
        *v = v.max(0.0);
    }
    Ok(CoarseMap { extents, values })
}

/// Score gradient with respect to the CT channel of the input, with every
/// ReLU passing only positive activations that receive positive gradient.
pub fn guided_backprop(pass: &ForwardPass, score: Var) -> Result<Vec<f64>> {
    let grads = pass.tape.backward_with(score, ReluRule::Guided)?;
    let shape = pass.tape.value(pass.volume).shape();
    let n: usize = shape[1..].iter().product();
    Ok(match grads.get(pass.volume) {
        Some(g) => g.data()[..n].to_vec(),
        None => vec![0.0; n],
    })
}

/// Trilinear resampling with half-voxel alignment; edges clamp, so a
/// constant field stays constant.
pub fn upsample_trilinear(values: &[f64], from: [usize; 3], to: [usize; 3]) -> Vec<f64> {
    let axis = |i: usize, a: usize| -> (usize, usize, f64) {
        let src = ((i as f64 + 0.5) * from[a] as f64 / to[a] as f64 - 0.5).clamp(0.0, (from[a] - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(from[a] - 1);
        (lo, hi, src - lo as f64)
    };
    let at = |x: usize, y: usize, z: usize| values[(x * from[1] + y) * from[2] + z];
    let mut out = Vec::with_capacity(to.iter().product());
    for x in 0..to[0] {
        let (x0, x1, fx) = axis(x, 0);
        for y in 0..to[1] {
            let (y0, y1, fy) = axis(y, 1);
            for z in 0..to[2] {
                let (z0, z1, fz) = axis(z, 2);
                let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + t * (b - a) };
                let c00 = lerp(at(x0, y0, z0), at(x1, y0, z0), fx);
                let c10 = lerp(at(x0, y1, z0), at(x1, y1, z0), fx);
                let c01 = lerp(at(x0, y0, z1), at(x1, y0, z1), fx);
                let c11 = lerp(at(x0, y1, z1), at(x1, y1, z1), fx);
                out.push(lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz));
            }
        }
    }
    out
}

/// Min-max scaling to `[0, 1]`; an all-zero input stays zero and any other
/// constant input becomes all ones.
pub fn min_max_scale(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if values.is_empty() || max == 0.0 {
        return vec![0.0; values.len()];
    }
    if max == min {
        return vec![1.0; values.len()];
    }
    values.iter().map(|v| (v - min) / (max - min)).collect()
}

/// Upsamples the coarse map to `extents`, multiplies by `|guided|` and
/// scales the product to `[0, 1]`.
pub fn fuse_and_upsample(coarse: &CoarseMap, guided: &[f64], extents: [usize; 3]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n: usize = extents.iter().product();
    if guided.len() != n || coarse.values.len() != coarse.extents.iter().product::<usize>() {
        return Err(Error::Dimension {
            op: "fuse_and_upsample",
            lhs: vec![guided.len()],
            rhs: extents.to_vec(),
        });
    }
    let up = upsample_trilinear(&coarse.values, coarse.extents, extents);
    let raw: Vec<f64> = up.iter().zip(guided).map(|(c, g)| c * g.abs()).collect();
    Ok((min_max_scale(&raw), raw))
}

/// Full map for one patient, label and interval.
pub fn activation_map(
    model: &SurvivalModel,
    patient_id: &str,
    volume: &Tensor,
    clinical: &Tensor,
    guidance: &GuidanceVector,
    mode: ScoreMode,
) -> Result<ActivationMap> {
    let (_, pass, score) = guidance_score(model, volume, clinical, guidance, mode)?;
    let coarse = grad_weighted_map(&pass, score)?;
    let guided = guided_backprop(&pass, score)?;
    let extents = model.config().volume_extents;
    let (values, raw) = fuse_and_upsample(&coarse, &guided, extents)?;
    Ok(ActivationMap {
        patient_id: patient_id.to_string(),
        label: guidance.label,
        interval: guidance.interval,
        extents,
        values,
        raw,
    })
}

/// Binary greyscale PGM of the mid-axial slice (`z = Z/2`), `X` columns by
/// `Y` rows.
pub fn axial_slice_pgm(map: &ActivationMap) -> Vec<u8> {
    let [nx, ny, nz] = map.extents;
    let z = nz / 2;
    let mut out = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    for y in 0..ny {
        for x in 0..nx {
            let v = map.values[(x * ny + y) * nz + z];
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

/// Writes `<stem>.json`/`<stem>.raw` and `<stem>_axial.pgm`; returns the
/// volume header path and the slice path.
pub fn export_map(map: &ActivationMap, stem: &Path, spacing: [f64; 3]) -> Result<(PathBuf, PathBuf)> {
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let header = write_volume(stem, &map.to_grid(), spacing, ChannelRole::Activation)?;
    let mut name = stem.file_name().unwrap_or_default().to_os_string();
    name.push("_axial.pgm");
    let pgm = stem.with_file_name(name);
    fs::write(&pgm, axial_slice_pgm(map)).map_err(|e| Error::io(&pgm, e))?;
    Ok((header, pgm))
}

/// Box dilation of a binary grid by `radius` voxels per axis.
pub fn dilate(mask: &[bool], extents: [usize; 3], radius: [usize; 3]) -> Vec<bool> {
    let [nx, ny, nz] = extents;
    let mut out = vec![false; mask.len()];
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                if !mask[(x * ny + y) * nz + z] {
                    continue;
                }
                for xx in x.saturating_sub(radius[0])..(x + radius[0] + 1).min(nx) {
                    for yy in y.saturating_sub(radius[1])..(y + radius[1] + 1).min(ny) {
                        for zz in z.saturating_sub(radius[2])..(z + radius[2] + 1).min(nz) {
                            out[(xx * ny + yy) * nz + zz] = true;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Fraction of the top `fraction` of voxels (by value, ties broken by
/// index) that lie inside `region`. `None` for an all-zero map.
pub fn top_fraction_inside(values: &[f64], region: &[bool], fraction: f64) -> Option<f64> {
    if values.iter().all(|&v| v == 0.0) {
        return None;
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let k = ((values.len() as f64 * fraction).ceil() as usize).clamp(1, values.len());
    Some(order[..k].iter().filter(|&&i| region[i]).count() as f64 / k as f64)
}
