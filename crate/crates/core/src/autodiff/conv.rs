//! Direct-loop 3D cross-correlation kernels.

/// Geometry of one conv3d application.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Output extent along one axis, or `None` when the window does not fit.
pub(crate) fn output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output positions `o` along an axis for which `o*stride + k - padding`
/// lands inside `[0, input)`.
#[inline]
fn valid_range(k: usize, g: &ConvGeometry, axis: usize) -> std::ops::Range<usize> {
    let (s, p) = (g.stride, g.padding);
    let n_in = g.input[axis];
    let n_out = g.output[axis];
    let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
    // largest o with o*s + k - p <= n_in - 1
    let hi = if n_in + p > k {
        ((n_in - 1 + p - k) / s + 1).min(n_out)
    } else {
        0
    };
    lo..hi.max(lo)
}

pub(crate) fn forward(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let [xi, yi, zi] = g.input;
    let [xo, yo, zo] = g.output;
    let k = g.kernel;
    let (s, p) = (g.stride, g.padding);
    let out_vol = xo * yo * zo;
    let mut out = vec![0.0; g.c_out * out_vol];
    for co in 0..g.c_out {
        let out_c = &mut out[co * out_vol..(co + 1) * out_vol];
        out_c.fill(b[co]);
        for ci in 0..g.c_in {
            let x_c = &x[ci * xi * yi * zi..(ci + 1) * xi * yi * zi];
            for kx in 0..k {
                let rx = valid_range(kx, g, 0);
                for ky in 0..k {
                    let ry = valid_range(ky, g, 1);
                    for kz in 0..k {
                        let rz = valid_range(kz, g, 2);
                        let wv = w[(((co * g.c_in + ci) * k + kx) * k + ky) * k + kz];
                        if wv == 0.0 {
                            continue;
                        }
                        for ox in rx.clone() {
                            let ix = ox * s + kx - p;
                            for oy in ry.clone() {
                                let iy = oy * s + ky - p;
                                let in_row = (ix * yi + iy) * zi;
                                let out_row = (ox * yo + oy) * zo;
                                for oz in rz.clone() {
                                    let iz = oz * s + kz - p;
                                    out_c[out_row + oz] += wv * x_c[in_row + iz];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`forward`]: returns `(d_input, d_kernel, d_bias)` for the
/// upstream gradient `grad_out`.
pub(crate) fn backward(
    x: &[f64],
    w: &[f64],
    grad_out: &[f64],
    g: &ConvGeometry,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let [xi, yi, zi] = g.input;
    let [xo, yo, zo] = g.output;
    let k = g.kernel;
    let (s, p) = (g.stride, g.padding);
    let in_vol = xi * yi * zi;
    let out_vol = xo * yo * zo;
    let mut dx = vec![0.0; g.c_in * in_vol];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; g.c_out];
    for co in 0..g.c_out {
        let g_c = &grad_out[co * out_vol..(co + 1) * out_vol];
        db[co] = g_c.iter().sum();
        for ci in 0..g.c_in {
            let x_c = &x[ci * in_vol..(ci + 1) * in_vol];
            let dx_c = &mut dx[ci * in_vol..(ci + 1) * in_vol];
            for kx in 0..k {
                let rx = valid_range(kx, g, 0);
                for ky in 0..k {
                    let ry = valid_range(ky, g, 1);
                    for kz in 0..k {
                        let rz = valid_range(kz, g, 2);
                        let widx = (((co * g.c_in + ci) * k + kx) * k + ky) * k + kz;
                        let wv = w[widx];
                        let mut acc = 0.0;
                        for ox in rx.clone() {
                            let ix = ox * s + kx - p;
                            for oy in ry.clone() {
                                let iy = oy * s + ky - p;
                                let in_row = (ix * yi + iy) * zi;
                                let out_row = (ox * yo + oy) * zo;
                                for oz in rz.clone() {
                                    let iz = oz * s + kz - p;
                                    let go = g_c[out_row + oz];
                                    acc += go * x_c[in_row + iz];
                                    dx_c[in_row + iz] += wv * go;
                                }
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}
