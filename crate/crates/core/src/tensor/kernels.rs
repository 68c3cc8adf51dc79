//! Forward and backward kernels on raw NCHW slices. The tape wires these up.

use super::ConvSpec;

/// `c = op(a) * op(b) + beta * c` with `op(a)` m×k and `op(b)` k×n, all row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover the m×k, k×n and m×n index ranges implied by the strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(input: &[f32], c: usize, h: usize, w: usize, spec: &ConvSpec, ho: usize, wo: usize, cols: &mut [f32]) {
    let (kh, kw) = spec.kernel;
    let plane = ho * wo;
    let pad = spec.padding as isize;
    for ci in 0..c {
        let src = &input[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let dy = (ki * spec.dilation) as isize - pad;
                let dx = (kj * spec.dilation) as isize - pad;
                for oy in 0..ho {
                    let iy = (oy * spec.stride) as isize + dy;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * spec.stride) as isize + dx;
                        *v = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f32], c: usize, h: usize, w: usize, spec: &ConvSpec, ho: usize, wo: usize, out: &mut [f32]) {
    let (kh, kw) = spec.kernel;
    let plane = ho * wo;
    let pad = spec.padding as isize;
    for ci in 0..c {
        let dst = &mut out[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                let dy = (ki * spec.dilation) as isize - pad;
                let dx = (kj * spec.dilation) as isize - pad;
                for oy in 0..ho {
                    let iy = (oy * spec.stride) as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * spec.stride) as isize + dx;
                        if ix >= 0 && ix < w as isize {
                            dst[iy as usize * w + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvForward {
    pub out: Vec<f32>,
    /// Per-sample column matrices, `n * (c*kh*kw) * (ho*wo)` values.
    pub cols: Vec<f32>,
}

fn is_pointwise(spec: &ConvSpec) -> bool {
    spec.kernel == (1, 1) && spec.stride == 1 && spec.padding == 0
}

pub(crate) fn conv2d_forward(
    input: &[f32],
    dims: [usize; 4],
    weight: &[f32],
    bias: Option<&[f32]>,
    spec: &ConvSpec,
    ho: usize,
    wo: usize,
) -> ConvForward {
    let [n, c, h, w] = dims;
    let co = spec.out_channels;
    let ckk = c * spec.kernel.0 * spec.kernel.1;
    let plane = ho * wo;
    let pointwise = is_pointwise(spec);
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![0.0; n * ckk * plane]
    };
    let mut out = vec![0.0; n * co * plane];
    for s in 0..n {
        let x = &input[s * c * h * w..(s + 1) * c * h * w];
        let col: &[f32] = if pointwise {
            x
        } else {
            let col = &mut cols[s * ckk * plane..(s + 1) * ckk * plane];
            im2col(x, c, h, w, spec, ho, wo, col);
            col
        };
        let y = &mut out[s * co * plane..(s + 1) * co * plane];
        if let Some(b) = bias {
            for (o, chunk) in y.chunks_mut(plane).enumerate() {
                chunk.fill(b[o]);
            }
        }
        gemm(
            co,
            ckk,
            plane,
            weight,
            false,
            col,
            false,
            if bias.is_some() { 1.0 } else { 0.0 },
            y,
        );
    }
    ConvForward { out, cols }
}

pub(crate) struct ConvGrads {
    pub input: Vec<f32>,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    grad_out: &[f32],
    input: &[f32],
    cols: &[f32],
    dims: [usize; 4],
    weight: &[f32],
    spec: &ConvSpec,
    ho: usize,
    wo: usize,
    need_input: bool,
) -> ConvGrads {
    let [n, c, h, w] = dims;
    let co = spec.out_channels;
    let ckk = c * spec.kernel.0 * spec.kernel.1;
    let plane = ho * wo;
    let pointwise = is_pointwise(spec);
    let mut d_input = vec![0.0; n * c * h * w];
    let mut d_weight = vec![0.0; co * ckk];
    let mut d_bias = vec![0.0; co];
    let mut d_cols = if pointwise { Vec::new() } else { vec![0.0; ckk * plane] };
    for s in 0..n {
        let g = &grad_out[s * co * plane..(s + 1) * co * plane];
        for (o, chunk) in g.chunks(plane).enumerate() {
            d_bias[o] += chunk.iter().sum::<f32>();
        }
        let col = if pointwise {
            &input[s * c * h * w..(s + 1) * c * h * w]
        } else {
            &cols[s * ckk * plane..(s + 1) * ckk * plane]
        };
        gemm(co, plane, ckk, g, false, col, true, 1.0, &mut d_weight);
        if !need_input {
            continue;
        }
        let dx = &mut d_input[s * c * h * w..(s + 1) * c * h * w];
        if pointwise {
            gemm(ckk, co, plane, weight, true, g, false, 0.0, dx);
        } else {
            gemm(ckk, co, plane, weight, true, g, false, 0.0, &mut d_cols);
            col2im(&d_cols, c, h, w, spec, ho, wo, dx);
        }
    }
    ConvGrads {
        input: d_input,
        weight: d_weight,
        bias: d_bias,
    }
}

/// Per-channel statistics over N, H and W.
pub(crate) fn channel_mean_var(x: &[f32], dims: [usize; 4]) -> (Vec<f32>, Vec<f32>) {
    let [n, c, h, w] = dims;
    let plane = h * w;
    let count = (n * plane) as f64;
    let mut mean = vec![0.0f32; c];
    let mut var = vec![0.0f32; c];
    for ch in 0..c {
        let mut sum = 0.0f64;
        for s in 0..n {
            let off = (s * c + ch) * plane;
            sum += x[off..off + plane].iter().map(|&v| v as f64).sum::<f64>();
        }
        let m = sum / count;
        let mut sq = 0.0f64;
        for s in 0..n {
            let off = (s * c + ch) * plane;
            sq += x[off..off + plane]
                .iter()
                .map(|&v| {
                    let d = v as f64 - m;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ch] = m as f32;
        var[ch] = (sq / count) as f32;
    }
    (mean, var)
}

pub(crate) fn upsample_bilinear_forward(x: &[f32], dims: [usize; 4], factor: usize) -> Vec<f32> {
    let [n, c, h, w] = dims;
    let (oh, ow) = (h * factor, w * factor);
    let ys = interp_taps(h, factor);
    let xs = interp_taps(w, factor);
    let mut out = vec![0.0; n * c * oh * ow];
    for (plane_in, plane_out) in x.chunks(h * w).zip(out.chunks_mut(oh * ow)) {
        for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                let top = plane_in[y0 * w + x0] * (1.0 - wx) + plane_in[y0 * w + x1] * wx;
                let bot = plane_in[y1 * w + x0] * (1.0 - wx) + plane_in[y1 * w + x1] * wx;
                plane_out[oy * ow + ox] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    out
}

pub(crate) fn upsample_bilinear_backward(g: &[f32], dims: [usize; 4], factor: usize) -> Vec<f32> {
    let [n, c, h, w] = dims;
    let (oh, ow) = (h * factor, w * factor);
    let ys = interp_taps(h, factor);
    let xs = interp_taps(w, factor);
    let mut dx = vec![0.0; n * c * h * w];
    for (plane_g, plane_d) in g.chunks(oh * ow).zip(dx.chunks_mut(h * w)) {
        for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                let v = plane_g[oy * ow + ox];
                plane_d[y0 * w + x0] += v * (1.0 - wy) * (1.0 - wx);
                plane_d[y0 * w + x1] += v * (1.0 - wy) * wx;
                plane_d[y1 * w + x0] += v * wy * (1.0 - wx);
                plane_d[y1 * w + x1] += v * wy * wx;
            }
        }
    }
    dx
}

/// Half-pixel-centre source taps for each output index: (lower, upper, upper weight).
pub(crate) fn interp_taps(len: usize, factor: usize) -> Vec<(usize, usize, f32)> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f32 + 0.5) / factor as f32 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            if i0 + 1 >= len {
                (len - 1, len - 1, 0.0)
            } else {
                (i0, i0 + 1, src - i0 as f32)
            }
        })
        .collect()
}

/// Non-overlapping average pooling with partial windows at the border averaged
/// over their valid elements.
pub(crate) fn avg_pool_forward(x: &[f32], dims: [usize; 4], k: usize) -> (Vec<f32>, usize, usize) {
    let [n, c, h, w] = dims;
    let (oh, ow) = (h.div_ceil(k), w.div_ceil(k));
    let mut out = vec![0.0; n * c * oh * ow];
    for (pi, po) in x.chunks(h * w).zip(out.chunks_mut(oh * ow)) {
        for oy in 0..oh {
            let (y0, y1) = (oy * k, ((oy + 1) * k).min(h));
            for ox in 0..ow {
                let (x0, x1) = (ox * k, ((ox + 1) * k).min(w));
                let mut sum = 0.0f32;
                for y in y0..y1 {
                    sum += pi[y * w + x0..y * w + x1].iter().sum::<f32>();
                }
                po[oy * ow + ox] = sum / ((y1 - y0) * (x1 - x0)) as f32;
            }
        }
    }
    (out, oh, ow)
}

pub(crate) fn avg_pool_backward(g: &[f32], dims: [usize; 4], k: usize) -> Vec<f32> {
    let [n, c, h, w] = dims;
    let (oh, ow) = (h.div_ceil(k), w.div_ceil(k));
    let mut dx = vec![0.0; n * c * h * w];
    for (pg, pd) in g.chunks(oh * ow).zip(dx.chunks_mut(h * w)) {
        for y in 0..h {
            let oy = y / k;
            let rows = ((oy + 1) * k).min(h) - oy * k;
            for x in 0..w {
                let ox = x / k;
                let cols = ((ox + 1) * k).min(w) - ox * k;
                pd[y * w + x] = pg[oy * ow + ox] / (rows * cols) as f32;
            }
        }
    }
    dx
}
