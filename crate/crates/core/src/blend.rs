//! Alpha masks and feature interpolation.
//!
//! Masks live at a canonical resolution and are bilinearly resampled to each
//! layer they are applied at. All interpolation goes through [`lerp`], so a
//! zero mask reproduces the first operand and a unit mask the second, bit
//! for bit.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::generator::{Generator, StyleCoeffs, Styles};
use crate::spatial::resample_plane;
use crate::tensor::{lerp, FeatureMap, Image, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaMask {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl AlphaMask {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask data of length {} for {height}×{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Range(format!("mask value {v} outside [0, 1]")));
        }
        Ok(AlphaMask {
            height,
            width,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let data = (0..height * width)
            .map(|i| f(i / width, i % width))
            .collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Raises every entry to `exponent` (entries stay in `[0, 1]`).
    pub fn powf(&self, exponent: f64) -> Result<AlphaMask> {
        if !(exponent > 0.0 && exponent.is_finite()) {
            return Err(Error::Domain(format!(
                "mask exponent {exponent} must be positive"
            )));
        }
        Ok(AlphaMask {
            data: self.data.iter().map(|v| v.powf(exponent)).collect(),
            ..self.clone()
        })
    }

    /// The mask bilinearly resampled to `h × w`, row-major.
    pub fn resampled(&self, h: usize, w: usize) -> Vec<f64> {
        resample_plane(&self.data, self.height, self.width, h, w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// How quickly a linear ramp rises. Slow is a plain linspace, fast cubes it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampSpeed {
    Slow,
    Fast,
    Exponent(f64),
}

impl RampSpeed {
    pub fn exponent(self) -> f64 {
        match self {
            RampSpeed::Slow => 1.0,
            RampSpeed::Fast => 3.0,
            RampSpeed::Exponent(e) => e,
        }
    }
}

/// Ramp value at normalised position `u` for a ramp spanning `[start, end]`.
pub(crate) fn ramp_value(u: f64, start: f64, end: f64, exponent: f64) -> f64 {
    let t = ((u - start) / (end - start)).clamp(0.0, 1.0);
    if t == 0.0 || t == 1.0 {
        t
    } else {
        t.powf(exponent)
    }
}

/// `(height, width)` mask that is 0 before `start_frac`, 1 after `end_frac`
/// and rises as `linspace^exponent` in between.
pub fn make_linear_mask(
    resolution: (usize, usize),
    axis: Axis,
    start_frac: f64,
    end_frac: f64,
    speed: RampSpeed,
) -> Result<AlphaMask> {
    if !(0.0 <= start_frac && start_frac < end_frac && end_frac <= 1.0) {
        return Err(Error::Domain(format!(
            "ramp fractions must satisfy 0 ≤ start < end ≤ 1, got {start_frac}..{end_frac}"
        )));
    }
    let e = speed.exponent();
    if !(e > 0.0 && e.is_finite()) {
        return Err(Error::Domain(format!("ramp exponent {e} must be positive")));
    }
    let (h, w) = resolution;
    let n = match axis {
        Axis::Horizontal => w,
        Axis::Vertical => h,
    };
    let profile: Vec<f64> = (0..n)
        .map(|i| {
            let u = if n > 1 {
                i as f64 / (n - 1) as f64
            } else {
                0.0
            };
            ramp_value(u, start_frac, end_frac, e)
        })
        .collect();
    AlphaMask::from_fn(h, w, |y, x| match axis {
        Axis::Horizontal => profile[x],
        Axis::Vertical => profile[y],
    })
}

/// Pixel box `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        PixelBox { x0, y0, x1, y1 }
    }

    pub fn area(&self) -> usize {
        self.x1.saturating_sub(self.x0) * self.y1.saturating_sub(self.y0)
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }
}

/// 1 inside `bx`, 0 outside, with a linear falloff over `feather` pixels
/// measured by Chebyshev distance to the box.
pub fn make_box_mask(
    resolution: (usize, usize),
    bx: PixelBox,
    feather: usize,
) -> Result<AlphaMask> {
    let (h, w) = resolution;
    if bx.is_empty() || bx.x1 > w || bx.y1 > h {
        return Err(Error::Domain(format!(
            "box {bx:?} is empty or outside the {h}×{w} frame"
        )));
    }
    let falloff = (feather + 1) as f64;
    AlphaMask::from_fn(h, w, |y, x| {
        let dx = bx.x0.saturating_sub(x).max((x + 1).saturating_sub(bx.x1));
        let dy = bx.y0.saturating_sub(y).max((y + 1).saturating_sub(bx.y1));
        let d = dx.max(dy);
        if d == 0 {
            1.0
        } else {
            (1.0 - d as f64 / falloff).max(0.0)
        }
    })
}

fn alpha_planes(a: &Tensor, b: &Tensor, alpha: &[f64], out: &mut Tensor) {
    let hw = a.height() * a.width();
    exec::for_each_chunk_mut(out.data_mut(), hw, |p, dst| {
        let (pa, pb) = (a.plane(p), b.plane(p));
        for i in 0..hw {
            dst[i] = lerp(pa[i], pb[i], alpha[i]);
        }
    });
}

/// `lerp(a, b, alpha)` with `alpha` an `H × W` plane broadcast over batch and
/// channels.
pub(crate) fn blend_tensors(a: &Tensor, b: &Tensor, alpha: &[f64]) -> Result<Tensor> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "cannot blend {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    debug_assert_eq!(alpha.len(), a.height() * a.width());
    let mut out = Tensor::zeros(a.shape());
    alpha_planes(a, b, alpha, &mut out);
    Ok(out)
}

/// `(1 − α) f_A + α f_B` with the mask resampled to the maps' resolution.
pub fn interpolate_features(
    fa: &FeatureMap,
    fb: &FeatureMap,
    mask: &AlphaMask,
) -> Result<FeatureMap> {
    if fa.layer_index != fb.layer_index {
        return Err(Error::Shape(format!(
            "feature maps come from layers {} and {}",
            fa.layer_index, fb.layer_index
        )));
    }
    let alpha = mask.resampled(fa.height(), fa.width());
    Ok(fa.with_data(blend_tensors(&fa.data, &fb.data, &alpha)?))
}

/// Translation in feature pixels, positive `dy` down and positive `dx` right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub dy: i64,
    pub dx: i64,
}

impl ShiftSpec {
    pub fn new(dy: i64, dx: i64) -> Self {
        ShiftSpec { dy, dx }
    }

    fn source(&self, y: usize, x: usize, h: usize, w: usize) -> Option<(usize, usize)> {
        let sy = y as i64 - self.dy;
        let sx = x as i64 - self.dx;
        ((0..h as i64).contains(&sy) && (0..w as i64).contains(&sx))
            .then(|| (sy as usize, sx as usize))
    }
}

/// Copies the masked region of `f` to its shifted location:
/// `out = (1 − Shift(α)) f + Shift(α) Shift(f)`, where `Shift` fills vacated
/// positions with zero. Outside the shifted mask `f` is untouched.
pub fn shift_blend(f: &FeatureMap, mask: &AlphaMask, shift: ShiftSpec) -> Result<FeatureMap> {
    let [_, _, h, w] = f.shape();
    if shift.dy.unsigned_abs() as usize >= h || shift.dx.unsigned_abs() as usize >= w {
        return Err(Error::Range(format!(
            "shift ({}, {}) out of range for {h}×{w} features",
            shift.dy, shift.dx
        )));
    }
    let alpha = mask.resampled(h, w);
    let sources: Vec<Option<(usize, usize)>> = (0..h * w)
        .map(|i| shift.source(i / w, i % w, h, w))
        .collect();
    let mut out = f.data.clone();
    let src = &f.data;
    exec::for_each_chunk_mut(out.data_mut(), h * w, |p, dst| {
        let plane = src.plane(p);
        for (i, s) in sources.iter().enumerate() {
            if let Some((sy, sx)) = *s {
                let j = sy * w + sx;
                dst[i] = lerp(plane[i], plane[j], alpha[j]);
            }
        }
    });
    Ok(f.with_data(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendMode {
    TwoImage,
    CrossGenerator,
    /// Spatially uniform `constant_alpha`.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendSpec {
    pub layer_set: BTreeSet<usize>,
    #[serde(default)]
    pub mask: Option<AlphaMask>,
    pub mode: BlendMode,
    #[serde(default)]
    pub constant_alpha: Option<f64>,
}

impl BlendSpec {
    pub fn masked(
        mode: BlendMode,
        layer_set: impl IntoIterator<Item = usize>,
        mask: AlphaMask,
    ) -> Self {
        BlendSpec {
            layer_set: layer_set.into_iter().collect(),
            mask: Some(mask),
            mode,
            constant_alpha: None,
        }
    }

    pub fn constant(layer_set: impl IntoIterator<Item = usize>, alpha: f64) -> Self {
        BlendSpec {
            layer_set: layer_set.into_iter().collect(),
            mask: None,
            mode: BlendMode::Constant,
            constant_alpha: Some(alpha),
        }
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if let Some(&l) = self.layer_set.iter().find(|&&l| l >= num_layers) {
            return Err(Error::Config(format!(
                "blend layer {l} outside a {num_layers}-layer generator"
            )));
        }
        match self.mode {
            BlendMode::Constant => match self.constant_alpha {
                Some(a) if (0.0..=1.0).contains(&a) => Ok(()),
                Some(a) => Err(Error::Range(format!("constant alpha {a} outside [0, 1]"))),
                None => Err(Error::Config("constant mode needs constant_alpha".into())),
            },
            _ if self.mask.is_none() => {
                Err(Error::Config(format!("{:?} mode needs a mask", self.mode)))
            }
            _ => Ok(()),
        }
    }

    /// Alpha plane at `h × w`.
    pub fn alpha_at(&self, h: usize, w: usize) -> Vec<f64> {
        match (self.mode, &self.mask) {
            (BlendMode::Constant, _) | (_, None) => vec![self.constant_alpha.unwrap_or(0.0); h * w],
            (_, Some(m)) => m.resampled(h, w),
        }
    }
}

/// Every layer of an `num_layers`-layer generator.
pub fn all_layers(num_layers: usize) -> BTreeSet<usize> {
    (0..num_layers).collect()
}

/// Layers `0..=cut`, where `cut` defaults to the config's attribute cut.
pub fn layers_up_to(cut: usize) -> BTreeSet<usize> {
    (0..=cut).collect()
}

/// Two synchronized synthesis passes. At each layer in `spec.layer_set` both
/// branches continue from the interpolated features; the final RGB outputs
/// are interpolated with the mask at output resolution.
fn blend_pass(
    gen_a: &Generator,
    gen_b: &Generator,
    ca: &StyleCoeffs,
    cb: &StyleCoeffs,
    spec: &BlendSpec,
) -> Result<Image> {
    let mut xa = gen_a.constant_input();
    let mut xb = gen_b.constant_input();
    for i in 0..gen_a.num_layers() {
        xa = gen_a.forward_layer(i, &xa, ca)?;
        xb = gen_b.forward_layer(i, &xb, cb)?;
        if spec.layer_set.contains(&i) {
            let alpha = spec.alpha_at(xa.height(), xa.width());
            xa = blend_tensors(&xa, &xb, &alpha)?;
            xb = xa.clone();
        }
    }
    let ra = gen_a.rgb_head(&xa, ca)?;
    let rb = gen_b.rgb_head(&xb, cb)?;
    let alpha = spec.alpha_at(ra.height(), ra.width());
    Generator::finish_image(&blend_tensors(&ra, &rb, &alpha)?)
}

pub fn render_two_image_blend<'a, 'b>(
    gen: &Generator,
    styles_a: impl Into<Styles<'a>>,
    styles_b: impl Into<Styles<'b>>,
    spec: &BlendSpec,
) -> Result<Image> {
    spec.validate(gen.num_layers())?;
    if spec.mode == BlendMode::CrossGenerator {
        return Err(Error::Config(
            "cross-generator spec used for a two-image blend".into(),
        ));
    }
    let ca = gen.resolve_styles(styles_a.into())?;
    let cb = gen.resolve_styles(styles_b.into())?;
    blend_pass(gen, gen, &ca, &cb, spec)
}

/// Branch A runs `gen_a`'s layers and branch B runs `gen_b`'s on the same
/// styles. A constant alpha gives a continuous translation; a box mask a
/// localized one.
pub fn render_cross_generator_blend<'a>(
    gen_a: &Generator,
    gen_b: &Generator,
    styles: impl Into<Styles<'a>>,
    spec: &BlendSpec,
) -> Result<Image> {
    if !gen_a.config().same_architecture(gen_b.config()) {
        return Err(Error::Config(
            "cross-generator blend needs identical architectures".into(),
        ));
    }
    spec.validate(gen_a.num_layers())?;
    if spec.mode == BlendMode::TwoImage {
        return Err(Error::Config(
            "two-image spec used for a cross-generator blend".into(),
        ));
    }
    let styles = styles.into();
    let ca = gen_a.resolve_styles(styles)?;
    let cb = gen_b.resolve_styles(styles)?;
    blend_pass(gen_a, gen_b, &ca, &cb, spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_mask_is_linspace() {
        let m = make_linear_mask((1, 4), Axis::Horizontal, 0.0, 1.0, RampSpeed::Slow).unwrap();
        let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in m.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let m = make_linear_mask((1, 5), Axis::Horizontal, 0.0, 1.0, RampSpeed::Slow).unwrap();
        assert_eq!(m.get(0, 2), 0.5);
        assert!(make_linear_mask((1, 4), Axis::Horizontal, 0.6, 0.2, RampSpeed::Slow).is_err());
    }

    #[test]
    fn vertical_mask_varies_by_row() {
        let m = make_linear_mask((3, 2), Axis::Vertical, 0.0, 1.0, RampSpeed::Slow).unwrap();
        assert_eq!(m.data(), &[0.0, 0.0, 0.5, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn box_mask_basics() {
        let m = make_box_mask((6, 8), PixelBox::new(2, 1, 5, 4), 0).unwrap();
        assert_eq!(m.sum(), 9.0);
        let full = make_box_mask((6, 8), PixelBox::new(0, 0, 8, 6), 3).unwrap();
        assert!(full.data().iter().all(|&v| v == 1.0));
        assert!(make_box_mask((6, 8), PixelBox::new(3, 1, 3, 4), 0).is_err());
        assert!(make_box_mask((6, 8), PixelBox::new(0, 0, 9, 4), 0).is_err());
    }

    #[test]
    fn constant_half_mask_averages() {
        let fa = FeatureMap::new(1, Tensor::full([1, 2, 3, 3], 2.0));
        let fb = FeatureMap::new(1, Tensor::full([1, 2, 3, 3], 4.0));
        let m = AlphaMask::constant(8, 8, 0.5).unwrap();
        let out = interpolate_features(&fa, &fb, &m).unwrap();
        assert!(out.data.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let fa = FeatureMap::new(1, Tensor::zeros([1, 2, 3, 3]));
        let fb = FeatureMap::new(1, Tensor::zeros([1, 2, 3, 4]));
        let m = AlphaMask::constant(2, 2, 0.5).unwrap();
        assert!(matches!(
            interpolate_features(&fa, &fb, &m),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn shift_out_of_range() {
        let f = FeatureMap::new(2, Tensor::zeros([1, 1, 4, 4]));
        let m = AlphaMask::constant(4, 4, 1.0).unwrap();
        assert!(matches!(
            shift_blend(&f, &m, ShiftSpec::new(0, 4)),
            Err(Error::Range(_))
        ));
        assert!(shift_blend(&f, &m, ShiftSpec::new(-3, 3)).is_ok());
    }

    #[test]
    fn spec_validation() {
        assert!(BlendSpec::constant([0, 9], 0.5).validate(8).is_err());
        assert!(BlendSpec::constant([0], 1.5).validate(8).is_err());
        let mut s = BlendSpec::constant([0], 0.5);
        s.mode = BlendMode::TwoImage;
        assert!(s.validate(8).is_err());
    }
}
