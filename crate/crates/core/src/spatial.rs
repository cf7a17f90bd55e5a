//! Padding and resizing of feature maps.
//!
//! Injecting a padded or resized `f_i` back into synthesis grows the output
//! by the same factor, since every later layer is convolutional.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::{lerp, FeatureMap, Tensor};

/// Layer the spatial operations are applied at unless told otherwise.
pub const DEFAULT_SPATIAL_LAYER: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    Replicate,
    /// Mirror without repeating the border pixel.
    Reflect,
    Circular,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PadSpec {
    pub mode: PadMode,
    pub left: usize,
    pub right: usize,
    pub top: usize,
    pub bottom: usize,
}

impl PadSpec {
    pub fn new(mode: PadMode, left: usize, right: usize, top: usize, bottom: usize) -> Self {
        PadSpec {
            mode,
            left,
            right,
            top,
            bottom,
        }
    }

    pub fn uniform(mode: PadMode, amount: usize) -> Self {
        Self::new(mode, amount, amount, amount, amount)
    }

    pub fn horizontal(mode: PadMode, left: usize, right: usize) -> Self {
        Self::new(mode, left, right, 0, 0)
    }

    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.mode == PadMode::Reflect {
            if self.left.max(self.right) >= w || self.top.max(self.bottom) >= h {
                return Err(Error::Range(format!(
                    "reflect padding ({}, {}, {}, {}) needs amounts below the input size {h}×{w}",
                    self.left, self.right, self.top, self.bottom
                )));
            }
        }
        Ok(())
    }
}

/// Maps an output coordinate (already offset by the leading pad) to an input
/// coordinate, or `None` for zero fill.
fn source_index(mode: PadMode, i: isize, n: usize) -> Option<usize> {
    let n = n as isize;
    if (0..n).contains(&i) {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Replicate => Some(i.clamp(0, n - 1) as usize),
        PadMode::Circular => Some(i.rem_euclid(n) as usize),
        PadMode::Reflect => {
            if n == 1 {
                return Some(0);
            }
            let period = 2 * (n - 1);
            let m = i.rem_euclid(period);
            Some(if m < n { m } else { period - m } as usize)
        }
    }
}

pub fn pad_features(f: &FeatureMap, spec: &PadSpec) -> Result<FeatureMap> {
    let [b, c, h, w] = f.shape();
    spec.validate(h, w)?;
    if spec.left + spec.right + spec.top + spec.bottom == 0 {
        return Ok(f.clone());
    }
    let oh = h + spec.top + spec.bottom;
    let ow = w + spec.left + spec.right;
    let rows: Vec<Option<usize>> = (0..oh)
        .map(|y| source_index(spec.mode, y as isize - spec.top as isize, h))
        .collect();
    let cols: Vec<Option<usize>> = (0..ow)
        .map(|x| source_index(spec.mode, x as isize - spec.left as isize, w))
        .collect();
    let mut out = Tensor::zeros([b, c, oh, ow]);
    let src = &f.data;
    exec::for_each_chunk_mut(out.data_mut(), oh * ow, |p, plane| {
        let input = src.plane(p);
        for (y, sy) in rows.iter().enumerate() {
            let Some(sy) = sy else { continue };
            for (x, sx) in cols.iter().enumerate() {
                if let Some(sx) = sx {
                    plane[y * ow + x] = input[sy * w + sx];
                }
            }
        }
    });
    Ok(f.with_data(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeMethod {
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeTarget {
    /// Multiply both dimensions by `num / den` (rounded down).
    Scale {
        num: usize,
        den: usize,
    },
    Size {
        height: usize,
        width: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResizeSpec {
    pub target: ResizeTarget,
    pub method: ResizeMethod,
}

impl ResizeSpec {
    pub fn scale(num: usize, den: usize, method: ResizeMethod) -> Self {
        ResizeSpec {
            target: ResizeTarget::Scale { num, den },
            method,
        }
    }

    pub fn size(height: usize, width: usize, method: ResizeMethod) -> Self {
        ResizeSpec {
            target: ResizeTarget::Size { height, width },
            method,
        }
    }

    /// Output dimensions for an `h × w` input.
    pub fn target_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (oh, ow) = match self.target {
            ResizeTarget::Scale { num, den } => {
                if num == 0 || den == 0 {
                    return Err(Error::Range(format!("scale {num}/{den} must be positive")));
                }
                (h * num / den, w * num / den)
            }
            ResizeTarget::Size { height, width } => (height, width),
        };
        if oh == 0 || ow == 0 {
            return Err(Error::Range(format!(
                "resize target {oh}×{ow} has a zero dimension"
            )));
        }
        Ok((oh, ow))
    }
}

pub fn resize_features(f: &FeatureMap, spec: &ResizeSpec) -> Result<FeatureMap> {
    let [b, c, h, w] = f.shape();
    let (oh, ow) = spec.target_dims(h, w)?;
    if (oh, ow) == (h, w) {
        return Ok(f.clone());
    }
    let mut out = Tensor::zeros([b, c, oh, ow]);
    let src = &f.data;
    match spec.method {
        ResizeMethod::Nearest => {
            exec::for_each_chunk_mut(out.data_mut(), oh * ow, |p, plane| {
                let input = src.plane(p);
                for y in 0..oh {
                    let sy = y * h / oh;
                    for x in 0..ow {
                        plane[y * ow + x] = input[sy * w + x * w / ow];
                    }
                }
            });
        }
        ResizeMethod::Bilinear => {
            let taps_y = bilinear_taps(h, oh);
            let taps_x = bilinear_taps(w, ow);
            exec::for_each_chunk_mut(out.data_mut(), oh * ow, |p, plane| {
                bilinear_into(src.plane(p), w, &taps_y, &taps_x, plane);
            });
        }
    }
    Ok(f.with_data(out))
}

/// Source index pair and weight for each output coordinate, align-corners
/// false: `src = (dst + 0.5) · n_in / n_out − 0.5`, clamped to the input.
fn bilinear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

fn bilinear_into(
    input: &[f64],
    w: usize,
    taps_y: &[(usize, usize, f64)],
    taps_x: &[(usize, usize, f64)],
    out: &mut [f64],
) {
    let ow = taps_x.len();
    for (y, &(y0, y1, ty)) in taps_y.iter().enumerate() {
        for (x, &(x0, x1, tx)) in taps_x.iter().enumerate() {
            let top = lerp(input[y0 * w + x0], input[y0 * w + x1], tx);
            let bottom = lerp(input[y1 * w + x0], input[y1 * w + x1], tx);
            out[y * ow + x] = lerp(top, bottom, ty);
        }
    }
}

/// Bilinearly resamples a single `h × w` plane. Constant planes stay exactly
/// constant and values never leave the input's range.
pub fn resample_plane(input: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    if (oh, ow) == (h, w) {
        return input.to_vec();
    }
    let mut out = vec![0.0; oh * ow];
    bilinear_into(
        input,
        w,
        &bilinear_taps(h, oh),
        &bilinear_taps(w, ow),
        &mut out,
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> FeatureMap {
        FeatureMap::new(
            0,
            Tensor::from_fn([1, 1, h, w], |_, _, y, x| (y * w + x) as f64),
        )
    }

    #[test]
    fn zero_amounts_is_identity() {
        let f = ramp(3, 4);
        for mode in [
            PadMode::Zero,
            PadMode::Reflect,
            PadMode::Circular,
            PadMode::Replicate,
        ] {
            assert_eq!(pad_features(&f, &PadSpec::uniform(mode, 0)).unwrap(), f);
        }
    }

    #[test]
    fn reflect_excludes_border() {
        let f = FeatureMap::new(
            0,
            Tensor::from_vec([1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap(),
        );
        let p = pad_features(&f, &PadSpec::horizontal(PadMode::Reflect, 2, 2)).unwrap();
        assert_eq!(p.data.data(), &[3.0, 2.0, 1.0, 2.0, 3.0, 2.0, 1.0]);
        assert!(matches!(
            pad_features(&f, &PadSpec::horizontal(PadMode::Reflect, 3, 0)),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn nearest_doubles_into_blocks() {
        let f = ramp(2, 2);
        let r = resize_features(&f, &ResizeSpec::scale(2, 1, ResizeMethod::Nearest)).unwrap();
        assert_eq!(
            r.data.data(),
            &[0., 0., 1., 1., 0., 0., 1., 1., 2., 2., 3., 3., 2., 2., 3., 3.]
        );
    }

    #[test]
    fn zero_target_is_rejected() {
        let f = ramp(2, 2);
        assert!(resize_features(&f, &ResizeSpec::size(0, 3, ResizeMethod::Bilinear)).is_err());
        assert!(resize_features(&f, &ResizeSpec::scale(1, 4, ResizeMethod::Nearest)).is_err());
    }

    #[test]
    fn constant_plane_resamples_exactly() {
        let v = 0.3;
        let out = resample_plane(&[v; 12], 3, 4, 7, 11);
        assert!(out.iter().all(|&x| x == v));
    }
}
