//! 3D volumes, the header+raw file format, and model-input preprocessing.
//!
//! A volume on disk is a JSON header plus a raw little-endian `f32` payload
//! with `x` varying fastest. In memory, [`Grid3`] uses the same layout as
//! [`Tensor`] (`z` fastest); conversion happens at I/O.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// HU window applied before scaling to `[-1, 1]`.
pub const HU_WINDOW: (f64, f64) = (-500.0, 500.0);

#[derive(Clone, Debug, PartialEq)]
pub struct Grid3 {
    extents: [usize; 3],
    data: Vec<f32>,
}

impl Grid3 {
    pub fn new(extents: [usize; 3], data: Vec<f32>) -> Result<Self> {
        if extents.contains(&0) || extents.iter().product::<usize>() != data.len() {
            return Err(Error::Data(format!(
                "grid extents {extents:?} do not match {} values",
                data.len()
            )));
        }
        Ok(Self { extents, data })
    }

    pub fn filled(extents: [usize; 3], value: f32) -> Self {
        Self {
            extents,
            data: vec![value; extents.iter().product()],
        }
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.extents[1] + y) * self.extents[2] + z
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }
}

/// CT and GTV mask for one patient.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeSample {
    pub patient_id: String,
    /// Hounsfield units.
    pub ct: Grid3,
    /// Binary gross tumour volume mask.
    pub mask: Grid3,
    /// Millimetres per voxel along x, y, z.
    pub spacing: [f64; 3],
}

impl VolumeSample {
    pub fn validate(&self) -> Result<()> {
        if self.ct.extents() != self.mask.extents() {
            return Err(Error::Data(format!(
                "{}: ct extents {:?} differ from mask extents {:?}",
                self.patient_id,
                self.ct.extents(),
                self.mask.extents()
            )));
        }
        if self.mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data(format!("{}: mask is not binary", self.patient_id)));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Data(format!("{}: spacing must be positive", self.patient_id)));
        }
        Ok(())
    }
}

/// Mask centroid in voxel coordinates, `None` for an empty mask.
pub fn mask_centroid(mask: &Grid3) -> Option<[f64; 3]> {
    let [nx, ny, nz] = mask.extents();
    let mut acc = [0.0; 3];
    let mut count = 0.0;
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                if mask.get(x, y, z) > 0.5 {
                    acc[0] += x as f64;
                    acc[1] += y as f64;
                    acc[2] += z as f64;
                    count += 1.0;
                }
            }
        }
    }
    (count > 0.0).then(|| acc.map(|a| a / count))
}

/// Source-volume coordinate of crop voxel 0 when cropping `crop` voxels
/// centred on the mask centroid (rounded to the nearest voxel).
pub fn crop_origin(mask: &Grid3, crop: [usize; 3]) -> Option<[isize; 3]> {
    let c = mask_centroid(mask)?;
    Some([0, 1, 2].map(|a| c[a].round() as isize - (crop[a] / 2) as isize))
}

/// Maps HU to `[-1, 1]` after clipping to [`HU_WINDOW`].
pub fn normalize_hu(hu: f64) -> f64 {
    let (lo, hi) = HU_WINDOW;
    let clipped = hu.clamp(lo, hi);
    2.0 * (clipped - lo) / (hi - lo) - 1.0
}

/// Two-channel model input `[2, X, Y, Z]`: normalized CT then mask, cropped
/// around the mask centroid and zero-padded outside the source volume.
pub fn preprocess_volume(sample: &VolumeSample, crop: [usize; 3]) -> Result<Tensor> {
    sample.validate()?;
    if crop.contains(&0) {
        return Err(Error::Config(format!("crop extents must be positive, got {crop:?}")));
    }
    let origin = crop_origin(&sample.mask, crop)
        .ok_or_else(|| Error::Data(format!("{}: empty GTV mask", sample.patient_id)))?;
    let src = sample.ct.extents();
    let vol: usize = crop.iter().product();
    let mut out = vec![0.0; 2 * vol];
    for x in 0..crop[0] {
        let sx = origin[0] + x as isize;
        if sx < 0 || sx >= src[0] as isize {
            continue;
        }
        for y in 0..crop[1] {
            let sy = origin[1] + y as isize;
            if sy < 0 || sy >= src[1] as isize {
                continue;
            }
            for z in 0..crop[2] {
                let sz = origin[2] + z as isize;
                if sz < 0 || sz >= src[2] as isize {
                    continue;
                }
                let (sx, sy, sz) = (sx as usize, sy as usize, sz as usize);
                let o = (x * crop[1] + y) * crop[2] + z;
                out[o] = normalize_hu(f64::from(sample.ct.get(sx, sy, sz)));
                out[vol + o] = f64::from(sample.mask.get(sx, sy, sz));
            }
        }
    }
    Tensor::new(vec![2, crop[0], crop[1], crop[2]], out)
}

/// Resamples to `target` mm spacing: trilinear for CT, nearest for the mask.
pub fn resample(sample: &VolumeSample, target: [f64; 3]) -> Result<VolumeSample> {
    sample.validate()?;
    let src = sample.ct.extents();
    let ext: [usize; 3] = [0, 1, 2].map(|a| {
        ((src[a] as f64 * sample.spacing[a] / target[a]).round() as usize).max(1)
    });
    let mut ct = Grid3::filled(ext, 0.0);
    let mut mask = Grid3::filled(ext, 0.0);
    for x in 0..ext[0] {
        for y in 0..ext[1] {
            for z in 0..ext[2] {
                // voxel centres in physical space
                let p = [x, y, z];
                let s: [f64; 3] = [0, 1, 2].map(|a| {
                    ((p[a] as f64 + 0.5) * target[a] / sample.spacing[a] - 0.5)
                        .clamp(0.0, (src[a] - 1) as f64)
                });
                ct.set(x, y, z, trilinear(&sample.ct, s) as f32);
                let n = s.map(|v| v.round() as usize);
                mask.set(x, y, z, sample.mask.get(n[0], n[1], n[2]));
            }
        }
    }
    Ok(VolumeSample {
        patient_id: sample.patient_id.clone(),
        ct,
        mask,
        spacing: target,
    })
}

/// Trilinear sample at an in-range continuous coordinate.
pub(crate) fn trilinear(g: &Grid3, p: [f64; 3]) -> f64 {
    let e = g.extents();
    let mut i0 = [0usize; 3];
    let mut i1 = [0usize; 3];
    let mut f = [0.0; 3];
    for a in 0..3 {
        let fl = p[a].floor();
        i0[a] = (fl as usize).min(e[a] - 1);
        i1[a] = (i0[a] + 1).min(e[a] - 1);
        f[a] = p[a] - fl;
    }
    let mut acc = 0.0;
    for (dx, wx) in [(i0[0], 1.0 - f[0]), (i1[0], f[0])] {
        if wx == 0.0 {
            continue;
        }
        for (dy, wy) in [(i0[1], 1.0 - f[1]), (i1[1], f[1])] {
            if wy == 0.0 {
                continue;
            }
            for (dz, wz) in [(i0[2], 1.0 - f[2]), (i1[2], f[2])] {
                if wz == 0.0 {
                    continue;
                }
                acc += wx * wy * wz * f64::from(g.get(dx, dy, dz));
            }
        }
    }
    acc
}

/// What a volume file holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelRole {
    Ct,
    Mask,
    Activation,
}

/// JSON sidecar describing a raw volume payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub extents: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// Always `"f32le"`.
    pub dtype: String,
    /// Always `"x_fastest"`.
    pub layout: String,
    pub channel_role: ChannelRole,
    /// Payload file name, relative to the header.
    pub raw_file: String,
}

/// Writes `<stem>.json` and `<stem>.raw`; returns the header path.
pub fn write_volume(stem: &Path, grid: &Grid3, spacing: [f64; 3], role: ChannelRole) -> Result<PathBuf> {
    let header_path = stem.with_extension("json");
    let raw_path = stem.with_extension("raw");
    let raw_name = raw_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Usage(format!("invalid volume path {}", stem.display())))?
        .to_string();
    let header = VolumeHeader {
        extents: grid.extents(),
        spacing_mm: spacing,
        dtype: "f32le".into(),
        layout: "x_fastest".into(),
        channel_role: role,
        raw_file: raw_name,
    };
    let [nx, ny, nz] = grid.extents();
    let mut bytes = Vec::with_capacity(grid.data().len() * 4);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                bytes.extend_from_slice(&grid.get(x, y, z).to_le_bytes());
            }
        }
    }
    fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))?;
    let json = serde_json::to_string_pretty(&header).map_err(|e| Error::json(&header_path, e))?;
    fs::write(&header_path, json).map_err(|e| Error::io(&header_path, e))?;
    Ok(header_path)
}

pub fn read_volume(header_path: &Path) -> Result<(Grid3, VolumeHeader)> {
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header: VolumeHeader = serde_json::from_str(&text).map_err(|e| Error::json(header_path, e))?;
    if header.dtype != "f32le" || header.layout != "x_fastest" {
        return Err(Error::Data(format!(
            "{}: unsupported dtype/layout {}/{}",
            header_path.display(),
            header.dtype,
            header.layout
        )));
    }
    let raw_path = header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.raw_file);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let [nx, ny, nz] = header.extents;
    let n = nx * ny * nz;
    if bytes.len() != 4 * n {
        return Err(Error::Data(format!(
            "{}: expected {} bytes for extents {:?}, found {}",
            raw_path.display(),
            4 * n,
            header.extents,
            bytes.len()
        )));
    }
    let mut grid = Grid3::filled(header.extents, 0.0);
    let mut chunks = bytes.chunks_exact(4);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let c = chunks.next().expect("length checked");
                grid.set(x, y, z, f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
            }
        }
    }
    Ok((grid, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centred_sample(ext: [usize; 3]) -> VolumeSample {
        let mut ct = Grid3::filled(ext, 0.0);
        let mut i = 0.0f32;
        for x in 0..ext[0] {
            for y in 0..ext[1] {
                for z in 0..ext[2] {
                    ct.set(x, y, z, -600.0 + 13.0 * i);
                    i += 1.0;
                }
            }
        }
        let mut mask = Grid3::filled(ext, 0.0);
        // symmetric mask: centroid exactly at the volume centre
        for x in 0..ext[0] {
            for y in 0..ext[1] {
                for z in 0..ext[2] {
                    mask.set(x, y, z, 1.0);
                }
            }
        }
        VolumeSample {
            patient_id: "p".into(),
            ct,
            mask,
            spacing: [1.0; 3],
        }
    }

    #[test]
    fn hu_window_endpoints() {
        assert_eq!(normalize_hu(500.0), 1.0);
        assert_eq!(normalize_hu(-500.0), -1.0);
        assert_eq!(normalize_hu(0.0), 0.0);
        assert_eq!(normalize_hu(1200.0), 1.0);
        assert_eq!(normalize_hu(-3000.0), -1.0);
    }

    #[test]
    fn identity_crop_passes_through() {
        for ext in [[4, 4, 4], [5, 6, 3], [16, 16, 8]] {
            let s = centred_sample(ext);
            let t = preprocess_volume(&s, ext).unwrap();
            let vol: usize = ext.iter().product();
            for (i, v) in s.ct.data().iter().enumerate() {
                assert_eq!(t.data()[i], normalize_hu(f64::from(*v)));
                assert_eq!(t.data()[vol + i], 1.0);
            }
        }
    }

    #[test]
    fn crop_pads_outside_the_volume() {
        let mut s = centred_sample([4, 4, 4]);
        s.mask = Grid3::filled([4, 4, 4], 0.0);
        s.mask.set(0, 0, 0, 1.0);
        let t = preprocess_volume(&s, [4, 4, 4]).unwrap();
        // origin is (-2,-2,-2): first two planes along each axis are padding
        assert_eq!(t.data()[0], 0.0);
        let o = (2 * 4 + 2) * 4 + 2;
        assert_eq!(t.data()[64 + o], 1.0);
        assert_eq!(t.data()[o], normalize_hu(f64::from(s.ct.get(0, 0, 0))));
    }

    #[test]
    fn empty_mask_is_data_error() {
        let mut s = centred_sample([4, 4, 4]);
        s.mask = Grid3::filled([4, 4, 4], 0.0);
        assert!(matches!(preprocess_volume(&s, [4, 4, 4]), Err(Error::Data(_))));
    }

    #[test]
    fn resample_identity_spacing() {
        let s = centred_sample([4, 5, 3]);
        let r = resample(&s, [1.0; 3]).unwrap();
        assert_eq!(r.ct, s.ct);
        assert_eq!(r.mask, s.mask);
    }

    #[test]
    fn resample_halves_extent() {
        let mut s = centred_sample([4, 4, 4]);
        s.spacing = [0.5, 0.5, 0.5];
        let r = resample(&s, [1.0; 3]).unwrap();
        assert_eq!(r.ct.extents(), [2, 2, 2]);
        assert!(r.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn volume_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = centred_sample([3, 4, 5]);
        let h = write_volume(&dir.path().join("p_ct"), &s.ct, [1.0, 1.0, 2.0], ChannelRole::Ct).unwrap();
        let (g, header) = read_volume(&h).unwrap();
        assert_eq!(g, s.ct);
        assert_eq!(header.spacing_mm, [1.0, 1.0, 2.0]);
        // x is the fastest axis on disk
        let raw = std::fs::read(dir.path().join("p_ct.raw")).unwrap();
        let second = f32::from_le_bytes([raw[4], raw[5], raw[6], raw[7]]);
        assert_eq!(second, s.ct.get(1, 0, 0));
    }
}
