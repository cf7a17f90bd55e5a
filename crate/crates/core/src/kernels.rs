//! Numerical kernels shared by the generator and the discriminator.
//!
//! All functions act on a single sample stored as contiguous `C×H×W`
//! planes. Forward and backward passes parallelise over whole output planes
//! so every value is accumulated in a fixed order.

use crate::exec;

pub const LRELU_SLOPE: f64 = 0.2;
pub const LRELU_GAIN: f64 = std::f64::consts::SQRT_2;
pub const DEMOD_EPS: f64 = 1e-8;

#[inline]
fn valid_range(len: usize, offset: isize) -> std::ops::Range<usize> {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    lo..hi.max(lo)
}

/// Zero-padded "same" cross-correlation with an odd `k×k` kernel.
pub fn conv2d(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    c_out: usize,
    k: usize,
) -> Vec<f64> {
    debug_assert_eq!(input.len(), c_in * h * w);
    debug_assert_eq!(weight.len(), c_out * c_in * k * k);
    let hw = h * w;
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; c_out * hw];
    exec::for_each_chunk_mut(&mut out, hw, |o, plane| {
        for i in 0..c_in {
            let src = &input[i * hw..(i + 1) * hw];
            for ky in 0..k {
                let oy = ky as isize - pad;
                let ys = valid_range(h, oy);
                for kx in 0..k {
                    let ox = kx as isize - pad;
                    let xs = valid_range(w, ox);
                    let wv = weight[((o * c_in + i) * k + ky) * k + kx];
                    let sx0 = (xs.start as isize + ox) as usize;
                    for y in ys.clone() {
                        let sy = (y as isize + oy) as usize;
                        let dst = &mut plane[y * w + xs.start..y * w + xs.end];
                        let row = &src[sy * w + sx0..sy * w + sx0 + xs.len()];
                        for (d, s) in dst.iter_mut().zip(row) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient of [`conv2d`] with respect to its input.
pub fn conv2d_backward_input(
    grad_out: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    c_out: usize,
    k: usize,
) -> Vec<f64> {
    let hw = h * w;
    let pad = (k / 2) as isize;
    let mut grad_in = vec![0.0; c_in * hw];
    exec::for_each_chunk_mut(&mut grad_in, hw, |i, plane| {
        for o in 0..c_out {
            let g = &grad_out[o * hw..(o + 1) * hw];
            for ky in 0..k {
                let oy = ky as isize - pad;
                for kx in 0..k {
                    let ox = kx as isize - pad;
                    let wv = weight[((o * c_in + i) * k + ky) * k + kx];
                    // input (sy, sx) received weight from output (sy - oy, sx - ox)
                    let ys = valid_range(h, -oy);
                    let xs = valid_range(w, -ox);
                    let x0 = (xs.start as isize - ox) as usize;
                    for sy in ys {
                        let y = (sy as isize - oy) as usize;
                        let dst = &mut plane[sy * w + xs.start..sy * w + xs.end];
                        let row = &g[y * w + x0..y * w + x0 + xs.len()];
                        for (d, r) in dst.iter_mut().zip(row) {
                            *d += wv * r;
                        }
                    }
                }
            }
        }
    });
    grad_in
}

/// Gradient of [`conv2d`] with respect to its weight.
pub fn conv2d_backward_weight(
    grad_out: &[f64],
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
) -> Vec<f64> {
    let hw = h * w;
    let pad = (k / 2) as isize;
    let kk = k * k;
    let mut grad_w = vec![0.0; c_out * c_in * kk];
    exec::for_each_chunk_mut(&mut grad_w, c_in * kk, |o, block| {
        let g = &grad_out[o * hw..(o + 1) * hw];
        for i in 0..c_in {
            let src = &input[i * hw..(i + 1) * hw];
            for ky in 0..k {
                let oy = ky as isize - pad;
                let ys = valid_range(h, oy);
                for kx in 0..k {
                    let ox = kx as isize - pad;
                    let xs = valid_range(w, ox);
                    let sx0 = (xs.start as isize + ox) as usize;
                    let mut acc = [0.0; 4];
                    for y in ys.clone() {
                        let sy = (y as isize + oy) as usize;
                        let grow = &g[y * w + xs.start..y * w + xs.end];
                        let srow = &src[sy * w + sx0..sy * w + sx0 + xs.len()];
                        let mut gc = grow.chunks_exact(4);
                        let mut sc = srow.chunks_exact(4);
                        for (a, b) in (&mut gc).zip(&mut sc) {
                            for l in 0..4 {
                                acc[l] += a[l] * b[l];
                            }
                        }
                        for (a, b) in gc.remainder().iter().zip(sc.remainder()) {
                            acc[0] += a * b;
                        }
                    }
                    block[(i * k + ky) * k + kx] = (acc[0] + acc[1]) + (acc[2] + acc[3]);
                }
            }
        }
    });
    grad_w
}

/// A style-modulated convolution kernel.
#[derive(Debug, Clone)]
pub struct Modulated {
    /// Effective kernel fed to [`conv2d`].
    pub weight: Vec<f64>,
    /// Per-output-channel demodulation factors, when demodulating.
    pub demod: Option<Vec<f64>>,
}

/// Scales input channel `i` of `weight` by `style[i]`, then optionally
/// normalises each output filter to unit L2 norm.
pub fn modulate(
    weight: &[f32],
    style: &[f64],
    c_out: usize,
    c_in: usize,
    k: usize,
    demodulate: bool,
) -> Modulated {
    let kk = k * k;
    let mut eff = vec![0.0; c_out * c_in * kk];
    for o in 0..c_out {
        for i in 0..c_in {
            let s = style[i];
            let base = (o * c_in + i) * kk;
            for t in 0..kk {
                eff[base + t] = weight[base + t] as f64 * s;
            }
        }
    }
    let demod = demodulate.then(|| {
        let per = c_in * kk;
        (0..c_out)
            .map(|o| {
                let ss: f64 = eff[o * per..(o + 1) * per].iter().map(|v| v * v).sum();
                let d = 1.0 / (ss + DEMOD_EPS).sqrt();
                for v in &mut eff[o * per..(o + 1) * per] {
                    *v *= d;
                }
                d
            })
            .collect()
    });
    Modulated { weight: eff, demod }
}

/// Back-propagates a gradient on the effective kernel to the raw weight and
/// the style vector. Returns `(d_weight, d_style)`.
pub fn modulate_backward(
    weight: &[f32],
    style: &[f64],
    c_out: usize,
    c_in: usize,
    k: usize,
    modulated: &Modulated,
    grad_eff: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let kk = k * k;
    let per = c_in * kk;
    // gradient with respect to the modulated (pre-demodulation) kernel
    let mut grad_mod = grad_eff.to_vec();
    if let Some(demod) = &modulated.demod {
        for o in 0..c_out {
            let d = demod[o];
            let mut dot = 0.0;
            for j in 0..per {
                let wm = weight[o * per + j] as f64 * style[j / kk];
                dot += grad_eff[o * per + j] * wm;
            }
            let d3 = d * d * d;
            for j in 0..per {
                let wm = weight[o * per + j] as f64 * style[j / kk];
                grad_mod[o * per + j] = d * grad_eff[o * per + j] - d3 * wm * dot;
            }
        }
    }
    let mut grad_w = vec![0.0; c_out * per];
    let mut grad_s = vec![0.0; c_in];
    for o in 0..c_out {
        for i in 0..c_in {
            let base = (o * c_in + i) * kk;
            for t in 0..kk {
                grad_w[base + t] = grad_mod[base + t] * style[i];
                grad_s[i] += grad_mod[base + t] * weight[base + t] as f64;
            }
        }
    }
    (grad_w, grad_s)
}

#[inline]
pub fn lrelu(v: f64) -> f64 {
    if v >= 0.0 {
        v * LRELU_GAIN
    } else {
        v * LRELU_SLOPE * LRELU_GAIN
    }
}

#[inline]
pub fn lrelu_grad(pre: f64) -> f64 {
    if pre >= 0.0 {
        LRELU_GAIN
    } else {
        LRELU_SLOPE * LRELU_GAIN
    }
}

/// Nearest-neighbour 2× upsampling of `planes` planes of size `h×w`.
pub fn upsample2x(input: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * oh * ow];
    exec::for_each_chunk_mut(&mut out, oh * ow, |p, plane| {
        let src = &input[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                plane[y * ow + x] = src[(y / 2) * w + x / 2];
            }
        }
    });
    out
}

/// Adjoint of [`upsample2x`]: sums each 2×2 block.
pub fn upsample2x_backward(grad: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * h * w];
    for p in 0..planes {
        let g = &grad[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                dst[(y / 2) * w + x / 2] += g[y * ow + x];
            }
        }
    }
    out
}

/// 2×2 average pooling; `h` and `w` must be even.
pub fn avg_pool2x(input: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let s = src[2 * y * w + 2 * x]
                    + src[2 * y * w + 2 * x + 1]
                    + src[(2 * y + 1) * w + 2 * x]
                    + src[(2 * y + 1) * w + 2 * x + 1];
                out[p * oh * ow + y * ow + x] = s * 0.25;
            }
        }
    }
    out
}

pub fn avg_pool2x_backward(grad: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * h * w];
    for p in 0..planes {
        for y in 0..h {
            for x in 0..w {
                out[p * h * w + y * w + x] = grad[p * oh * ow + (y / 2) * ow + x / 2] * 0.25;
            }
        }
    }
    out
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard-normal noise value addressed by `(seed, layer, y, x)`.
///
/// Position-addressed rather than drawn from a stream, so noise maps exist at
/// any spatial size and agree wherever two maps overlap.
pub fn noise_at(seed: u64, layer: usize, y: usize, x: usize) -> f64 {
    let key = splitmix64(seed ^ splitmix64((layer as u64) << 48 ^ (y as u64) << 24 ^ x as u64));
    let a = splitmix64(key);
    let b = splitmix64(key ^ 0xD1B5_4A32_D192_ED03);
    let u1 = ((a >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let u2 = (b >> 11) as f64 / (1u64 << 53) as f64;
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn noise_plane(seed: u64, layer: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(noise_at(seed, layer, y, x));
        }
    }
    out
}
