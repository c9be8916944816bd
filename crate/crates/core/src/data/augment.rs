//! Random rigid augmentation of `[2, X, Y, Z]` model inputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Fill value for CT voxels that come from outside the field of view.
pub const CT_FILL: f64 = -1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Maximum absolute rotation about each axis, degrees.
    pub max_rotation_deg: f64,
    /// Maximum absolute translation along each axis, voxels.
    pub max_shift_vox: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_rotation_deg: 10.0,
            max_shift_vox: 5.0,
        }
    }
}

/// One concrete rigid transform.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RigidTransform {
    /// Rotation about x, y, z, degrees.
    pub angles_deg: [f64; 3],
    pub shift: [f64; 3],
}

impl RigidTransform {
    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let mut draw = |m: f64| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
        let angles_deg = [draw(cfg.max_rotation_deg), draw(cfg.max_rotation_deg), draw(cfg.max_rotation_deg)];
        let shift = [draw(cfg.max_shift_vox), draw(cfg.max_shift_vox), draw(cfg.max_shift_vox)];
        Self { angles_deg, shift }
    }

    /// Rotation matrix `Rz·Ry·Rx`.
    fn rotation(&self) -> [[f64; 3]; 3] {
        let [a, b, c] = self.angles_deg.map(f64::to_radians);
        let (sa, ca) = a.sin_cos();
        let (sb, cb) = b.sin_cos();
        let (sc, cc) = c.sin_cos();
        let rx = [[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]];
        let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
        let rz = [[cc, -sc, 0.0], [sc, cc, 0.0], [0.0, 0.0, 1.0]];
        matmul(&rz, &matmul(&ry, &rx))
    }
}

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn augment<R: Rng + ?Sized>(input: &Tensor, cfg: &AugmentConfig, rng: &mut R) -> Result<Tensor> {
    apply_transform(input, &RigidTransform::sample(cfg, rng))
}

/// Resamples both channels through `t` about the volume centre: trilinear
/// for CT (channel 0), nearest-neighbour for the mask (channel 1).
pub fn apply_transform(input: &Tensor, t: &RigidTransform) -> Result<Tensor> {
    let s = input.shape();
    if s.len() != 4 || s[0] != 2 {
        return Err(Error::Dimension {
            op: "augment",
            lhs: s.to_vec(),
            rhs: vec![2, 0, 0, 0],
        });
    }
    let ext = [s[1], s[2], s[3]];
    let vol: usize = ext.iter().product();
    let centre = ext.map(|e| (e as f64 - 1.0) / 2.0);
    // inverse of a rotation is its transpose
    let r = t.rotation();
    let data = input.data();
    let at = |ch: usize, p: [usize; 3]| data[ch * vol + (p[0] * ext[1] + p[1]) * ext[2] + p[2]];
    let mut out = vec![0.0; 2 * vol];
    for x in 0..ext[0] {
        for y in 0..ext[1] {
            for z in 0..ext[2] {
                let d = [
                    x as f64 - centre[0] - t.shift[0],
                    y as f64 - centre[1] - t.shift[1],
                    z as f64 - centre[2] - t.shift[2],
                ];
                let src: [f64; 3] =
                    [0, 1, 2].map(|i| r[0][i] * d[0] + r[1][i] * d[1] + r[2][i] * d[2] + centre[i]);
                let o = (x * ext[1] + y) * ext[2] + z;
                let inside = (0..3).all(|a| src[a] >= -1e-9 && src[a] <= (ext[a] - 1) as f64 + 1e-9);
                if !inside {
                    out[o] = CT_FILL;
                    out[vol + o] = 0.0;
                    continue;
                }
                let src = [0, 1, 2].map(|a| src[a].clamp(0.0, (ext[a] - 1) as f64));
                // CT: trilinear
                let mut i0 = [0usize; 3];
                let mut f = [0.0; 3];
                for a in 0..3 {
                    let fl = src[a].floor();
                    i0[a] = fl as usize;
                    f[a] = src[a] - fl;
                }
                let mut acc = 0.0;
                for cx in 0..2 {
                    let wx = if cx == 0 { 1.0 - f[0] } else { f[0] };
                    if wx == 0.0 {
                        continue;
                    }
                    for cy in 0..2 {
                        let wy = if cy == 0 { 1.0 - f[1] } else { f[1] };
                        if wy == 0.0 {
                            continue;
                        }
                        for cz in 0..2 {
                            let wz = if cz == 0 { 1.0 - f[2] } else { f[2] };
                            if wz == 0.0 {
                                continue;
                            }
                            let p = [
                                (i0[0] + cx).min(ext[0] - 1),
                                (i0[1] + cy).min(ext[1] - 1),
                                (i0[2] + cz).min(ext[2] - 1),
                            ];
                            acc += wx * wy * wz * at(0, p);
                        }
                    }
                }
                out[o] = acc;
                let n = src.map(|v| v.round() as usize);
                out[vol + o] = at(1, n);
            }
        }
    }
    Tensor::new(s.to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_input(ext: [usize; 3]) -> Tensor {
        let vol: usize = ext.iter().product();
        let mut data: Vec<f64> = (0..vol).map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0).collect();
        data.extend((0..vol).map(|i| f64::from(u8::from(i % 7 < 3))));
        Tensor::new(vec![2, ext[0], ext[1], ext[2]], data).unwrap()
    }

    #[test]
    fn zero_transform_is_identity() {
        let t = sample_input([6, 5, 4]);
        let out = apply_transform(&t, &RigidTransform::default()).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn integer_shift_permutes_values() {
        let t = sample_input([6, 6, 6]);
        let out = apply_transform(
            &t,
            &RigidTransform {
                angles_deg: [0.0; 3],
                shift: [2.0, -1.0, 0.0],
            },
        )
        .unwrap();
        let idx = |c: usize, x: usize, y: usize, z: usize| c * 216 + (x * 6 + y) * 6 + z;
        // out(x, y, z) = in(x - 2, y + 1, z)
        assert_eq!(out.data()[idx(0, 3, 2, 4)], t.data()[idx(0, 1, 3, 4)]);
        assert_eq!(out.data()[idx(1, 5, 0, 1)], t.data()[idx(1, 3, 1, 1)]);
        assert_eq!(out.data()[idx(0, 0, 0, 0)], CT_FILL);
        assert_eq!(out.data()[idx(1, 0, 0, 0)], 0.0);
        let inputs: Vec<f64> = t.data()[..216].to_vec();
        for v in &out.data()[..216] {
            assert!(*v == CT_FILL || inputs.contains(v));
        }
    }

    #[test]
    fn mask_stays_binary() {
        let t = sample_input([8, 8, 6]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let out = augment(&t, &AugmentConfig::default(), &mut rng).unwrap();
            assert!(out.data()[8 * 8 * 6..].iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(out.data()[..8 * 8 * 6].iter().all(|&v| (-1.0..=1.0).contains(&v)));
        }
    }
}
