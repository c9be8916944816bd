//! Binary checkpoints.
//!
//! Layout (little-endian): the 8-byte magic `MSURVCKP`, a `u32` format
//! version, a `u64` length followed by the metadata JSON (encoder config,
//! time grid, clinical normalization, epoch), a `u32` tensor count, then per
//! tensor its UTF-8 name (`u32` length prefix), rank `u32`, dims `u64` each
//! and the `f64` values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::EncoderConfig;
use super::model::SurvivalModel;
use crate::autodiff::Tensor;
use crate::data::NormalizationStats;
use crate::error::{Error, Result};
use crate::survival::TimeGrid;

pub const MAGIC: &[u8; 8] = b"MSURVCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: EncoderConfig,
    grid: TimeGrid,
    normalization: Option<NormalizationStats>,
    epoch: usize,
}

pub fn checkpoint_bytes(model: &SurvivalModel) -> Result<Vec<u8>> {
    let meta = Meta {
        config: model.config.clone(),
        grid: model.grid.clone(),
        normalization: model.normalization,
        epoch: model.epoch,
    };
    let json = serde_json::to_vec(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let params = model.named_parameters();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, p) in params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let t = p.value();
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(model: &SurvivalModel, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, checkpoint_bytes(model)?).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated file while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let n = self.u64(what)?;
        usize::try_from(n).map_err(|_| Error::Checkpoint(format!("{what} length {n} too large")))
    }
}

fn parse(bytes: &[u8]) -> Result<(Meta, Vec<(String, Tensor)>)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let json_len = c.len("metadata")?;
    let meta: Meta = serde_json::from_slice(c.take(json_len, "metadata")?)
        .map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
    let count = c.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = c.u32("tensor name")? as usize;
        let name = String::from_utf8(c.take(name_len, "tensor name")?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = c.u32(&name)? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(c.len(&name)?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` shape overflows")))?;
        let data = c
            .take(n, &name)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        tensors.push((name, t));
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok((meta, tensors))
}

fn assign(model: &mut SurvivalModel, tensors: Vec<(String, Tensor)>) -> Result<()> {
    let names: Vec<String> = model.named_parameters().into_iter().map(|(n, _)| n).collect();
    if names.len() != tensors.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, model expects {}",
            tensors.len(),
            names.len()
        )));
    }
    for ((expected, p), (name, t)) in names.iter().zip(model.parameters_mut()).zip(tensors) {
        if *expected != name {
            return Err(Error::Checkpoint(format!("expected tensor `{expected}`, found `{name}`")));
        }
        if p.value().shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for tensor `{name}`: checkpoint {:?}, model {:?}",
                t.shape(),
                p.value().shape()
            )));
        }
        p.set_value(t)?;
    }
    Ok(())
}

/// Rebuilds a model from the configuration stored in the checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<SurvivalModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (meta, tensors) = parse(&bytes)?;
    let mut model = SurvivalModel::new(meta.config, meta.grid).map_err(|e| Error::Checkpoint(e.to_string()))?;
    model.normalization = meta.normalization;
    model.epoch = meta.epoch;
    assign(&mut model, tensors)?;
    Ok(model)
}

/// Loads parameters into an existing model, which keeps its own config.
/// Any tensor whose shape disagrees is reported by name.
pub fn load_checkpoint_into(model: &mut SurvivalModel, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (meta, tensors) = parse(&bytes)?;
    assign(model, tensors)?;
    model.grid = meta.grid;
    model.normalization = meta.normalization;
    model.epoch = meta.epoch;
    Ok(())
}
