//! Panoramas knitted from two-image spans.
//!
//! A span places two images side by side on one feature canvas (the learned
//! constant is tiled twice) and renders both style branches over it. At
//! every layer the branches are blended with a ramp between the two
//! constrained zones, and the zones themselves are overwritten with the
//! features of the standalone single-image renders. Each zone therefore
//! reproduces its standalone render exactly, and consecutive spans that share
//! an image agree exactly on that image's shared block. Cropping the spans
//! inside those blocks and concatenating them gives a seamless panorama.
//!
//! All ranges here are in output pixels along the span axis. Zone boundaries
//! must fall on the coarsest feature grid so they map to whole feature
//! columns at every layer.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::blend::{blend_tensors, ramp_value, AlphaMask, Axis};
use crate::error::{Error, Result};
use crate::exec;
use crate::generator::{sample_latents, Generator, HookSet, StyleCoeffs, StyleStack, StyleVector};
use crate::latent::smooth_latents;
use crate::tensor::{FeatureMap, Image, Tensor};

pub const DEFAULT_OVERLAP_FRAC: f64 = 0.5;

/// How the blend weight varies between the constrained zones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanAlpha {
    /// `((x − a + 1) / (b − a + 1))^exponent` over the ramp `[a, b)`.
    Ramp { exponent: f64 },
    /// One weight everywhere; zones must agree with it (0 left, 1 right).
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanPlan {
    pub left_styles: StyleStack,
    pub right_styles: StyleStack,
    pub overlap_frac: f64,
    pub constrained_left: Range<usize>,
    pub constrained_right: Range<usize>,
    pub alpha: SpanAlpha,
    pub axis: Axis,
}

/// Pixel size of one feature column at the base resolution.
fn grid_unit(gen: &Generator) -> usize {
    gen.output_resolution() / gen.config().base_resolution
}

/// Half-width of the blend band for `overlap_frac`, snapped to the grid and
/// kept strictly inside half an image.
pub fn half_band(gen: &Generator, overlap_frac: f64) -> Result<usize> {
    if !(overlap_frac > 0.0 && overlap_frac < 1.0) {
        return Err(Error::Domain(format!(
            "overlap_frac {overlap_frac} must lie in (0, 1)"
        )));
    }
    let r = gen.output_resolution();
    let u = grid_unit(gen);
    let max_units = (r / 2 - 1) / u;
    if max_units == 0 {
        return Err(Error::Config(format!(
            "{r}px images are too narrow to hold a {u}px blend band and a shared block"
        )));
    }
    let units = ((overlap_frac * r as f64 / 2.0) / u as f64).round() as usize;
    Ok(units.clamp(1, max_units) * u)
}

impl SpanPlan {
    /// Ramp of width `overlap_frac · W` centred on the seam; everything else
    /// is constrained.
    pub fn new(
        gen: &Generator,
        left_styles: StyleStack,
        right_styles: StyleStack,
        overlap_frac: f64,
    ) -> Result<Self> {
        let r = gen.output_resolution();
        let h = half_band(gen, overlap_frac)?;
        Ok(SpanPlan {
            left_styles,
            right_styles,
            overlap_frac,
            constrained_left: 0..r - h,
            constrained_right: r + h..2 * r,
            alpha: SpanAlpha::Ramp { exponent: 1.0 },
            axis: Axis::Horizontal,
        })
    }

    pub fn with_axis(mut self, axis: Axis) -> Self {
        self.axis = axis;
        self
    }

    /// Start of the ramp (end of the left zone).
    fn ramp_start(&self) -> usize {
        self.constrained_left.end
    }

    /// End of the ramp (start of the right zone, or the span end).
    fn ramp_end(&self, span: usize) -> usize {
        if self.constrained_right.is_empty() {
            span
        } else {
            self.constrained_right.start
        }
    }

    pub fn validate(&self, gen: &Generator) -> Result<()> {
        let r = gen.output_resolution();
        let span = 2 * r;
        let u = grid_unit(gen);
        let (cl, cr) = (&self.constrained_left, &self.constrained_right);
        if !cl.is_empty() && cl.start != 0 {
            return Err(Error::Config("constrained_left must start at 0".into()));
        }
        if !cr.is_empty() && cr.end != span {
            return Err(Error::Config(format!(
                "constrained_right must end at {span}"
            )));
        }
        if cl.end > r || (!cr.is_empty() && cr.start < r) {
            return Err(Error::Config(
                "constrained zones must stay within their own image".into(),
            ));
        }
        if !cr.is_empty() && cl.end > cr.start {
            return Err(Error::Range(format!(
                "ramp would overlap a constrained range: {cl:?} and {cr:?}"
            )));
        }
        for p in [cl.end, cr.start] {
            if p % u != 0 {
                return Err(Error::Config(format!(
                    "zone boundary {p} is not a multiple of the {u}px feature grid"
                )));
            }
        }
        match self.alpha {
            SpanAlpha::Ramp { exponent } if !(exponent > 0.0 && exponent.is_finite()) => Err(
                Error::Domain(format!("ramp exponent {exponent} must be positive")),
            ),
            SpanAlpha::Constant(a) if !(0.0..=1.0).contains(&a) => {
                Err(Error::Range(format!("constant alpha {a} outside [0, 1]")))
            }
            SpanAlpha::Constant(a)
                if (!cl.is_empty() && a != 0.0) || (!cr.is_empty() && a != 1.0) =>
            {
                Err(Error::Config(format!(
                    "constant alpha {a} contradicts the constrained zones"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Blend weight profile along the span axis at output resolution.
    pub fn alpha_profile(&self, span: usize) -> Vec<f64> {
        let (a, b) = (self.ramp_start(), self.ramp_end(span));
        (0..span)
            .map(|x| match self.alpha {
                SpanAlpha::Constant(v) => v,
                SpanAlpha::Ramp { .. } if x < a => 0.0,
                SpanAlpha::Ramp { .. } if x >= b => 1.0,
                SpanAlpha::Ramp { exponent } => {
                    let u = (x - a + 1) as f64 / (b - a + 1) as f64;
                    ramp_value(u, 0.0, 1.0, exponent)
                }
            })
            .collect()
    }

    fn alpha_mask(&self, r: usize) -> Result<AlphaMask> {
        let profile = self.alpha_profile(2 * r);
        match self.axis {
            Axis::Horizontal => AlphaMask::from_fn(r, 2 * r, |_, x| profile[x]),
            Axis::Vertical => AlphaMask::from_fn(2 * r, r, |y, _| profile[y]),
        }
    }
}

fn along_rows(axis: Axis) -> bool {
    axis == Axis::Vertical
}

/// Block `range` of `t` along `axis`.
fn take(t: &Tensor, range: Range<usize>, axis: Axis) -> Result<Tensor> {
    match axis {
        Axis::Horizontal => t.crop(0..t.height(), range),
        Axis::Vertical => t.crop(range, 0..t.width()),
    }
}

fn put(dst: &mut Tensor, src: &Tensor, offset: usize, axis: Axis) -> Result<()> {
    match axis {
        Axis::Horizontal => dst.paste(src, 0, offset),
        Axis::Vertical => dst.paste(src, offset, 0),
    }
}

/// Per-layer features and coefficients of a standalone render.
struct Pure {
    coeffs: StyleCoeffs,
    features: Vec<Tensor>,
}

fn pure_features(gen: &Generator, styles: &StyleStack) -> Result<Pure> {
    let coeffs = gen.styles_to_coeffs(styles)?;
    let mut synth = gen.synthesize(&coeffs, &HookSet::new().capture_all(gen.num_layers()))?;
    let features = (0..gen.num_layers())
        .map(|i| synth.captured.remove(&i).expect("captured").data)
        .collect();
    Ok(Pure { coeffs, features })
}

/// Overwrites the constrained zones of a layer-`layer` canvas with the pure
/// features of the left and right images.
fn override_zones(
    canvas: &mut Tensor,
    layer: usize,
    left: &Pure,
    right: &Pure,
    plan: &SpanPlan,
    r: usize,
) -> Result<()> {
    let f = &left.features[layer];
    let n = match plan.axis {
        Axis::Horizontal => f.width(),
        Axis::Vertical => f.height(),
    };
    let scale = |p: usize| p * n / r;
    let (cl, cr) = (&plan.constrained_left, &plan.constrained_right);
    if !cl.is_empty() {
        let block = take(&left.features[layer], 0..scale(cl.end), plan.axis)?;
        put(canvas, &block, 0, plan.axis)?;
    }
    if !cr.is_empty() {
        let block = take(&right.features[layer], scale(cr.start) - n..n, plan.axis)?;
        put(canvas, &block, scale(cr.start), plan.axis)?;
    }
    Ok(())
}

fn doubled_constant(gen: &Generator, axis: Axis) -> Result<Tensor> {
    let c = gen.constant_input();
    Tensor::concat(&[&c, &c], along_rows(axis))
}

fn span_from_pure(gen: &Generator, left: &Pure, right: &Pure, plan: &SpanPlan) -> Result<Image> {
    let r = gen.output_resolution();
    let mask = plan.alpha_mask(r)?;
    let mut x = doubled_constant(gen, plan.axis)?;
    for i in 0..gen.num_layers() {
        let xl = gen.forward_layer(i, &x, &left.coeffs)?;
        let xr = gen.forward_layer(i, &x, &right.coeffs)?;
        x = blend_tensors(&xl, &xr, &mask.resampled(xl.height(), xl.width()))?;
        override_zones(&mut x, i, left, right, plan, r)?;
    }
    let rl = gen.rgb_head(&x, &left.coeffs)?;
    let rr = gen.rgb_head(&x, &right.coeffs)?;
    Generator::finish_image(&blend_tensors(&rl, &rr, mask.data())?)
}

/// Renders `plan` into a `W × 2W` image (`2W × W` for a vertical span).
pub fn build_span(gen: &Generator, plan: &SpanPlan) -> Result<Image> {
    plan.validate(gen)?;
    let left = pure_features(gen, &plan.left_styles)?;
    let right = pure_features(gen, &plan.right_styles)?;
    span_from_pure(gen, &left, &right, plan)
}

/// One style rendered over the double-width canvas with `plan`'s zones
/// pinned to its standalone features; a span whose two images coincide.
pub fn render_wide(gen: &Generator, styles: &StyleStack, plan: &SpanPlan) -> Result<Image> {
    plan.validate(gen)?;
    let r = gen.output_resolution();
    let pure = pure_features(gen, styles)?;
    let mut x = doubled_constant(gen, plan.axis)?;
    for i in 0..gen.num_layers() {
        x = gen.forward_layer(i, &x, &pure.coeffs)?;
        override_zones(&mut x, i, &pure, &pure, plan, r)?;
    }
    Generator::finish_image(&gen.rgb_head(&x, &pure.coeffs)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanoramaPlan {
    pub latents: Vec<StyleVector>,
    /// Length of one span along the axis (two images).
    pub span_width: usize,
    /// Range taken from each span, in span coordinates.
    pub crop_ranges: Vec<Range<usize>>,
    pub smoothing_sigma: f64,
    pub overlap_frac: f64,
    pub ramp_exponent: f64,
    pub axis: Axis,
}

impl PanoramaPlan {
    /// Spans `(k, k+1)` are cut halfway through image `k+1`, inside the
    /// block both spans pin to its standalone render.
    pub fn new(
        gen: &Generator,
        latents: Vec<StyleVector>,
        overlap_frac: f64,
        smoothing_sigma: f64,
    ) -> Result<Self> {
        let n = latents.len();
        if n < 2 {
            return Err(Error::Domain(format!(
                "a panorama needs at least 2 latents, got {n}"
            )));
        }
        half_band(gen, overlap_frac)?;
        let r = gen.output_resolution();
        let cut = r / 2;
        let crop_ranges = (0..n - 1)
            .map(|k| {
                let start = if k == 0 { 0 } else { cut };
                let end = if k == n - 2 { 2 * r } else { r + cut };
                start..end
            })
            .collect();
        Ok(PanoramaPlan {
            latents,
            span_width: 2 * r,
            crop_ranges,
            smoothing_sigma,
            overlap_frac,
            ramp_exponent: 1.0,
            axis: Axis::Horizontal,
        })
    }

    pub fn with_axis(mut self, axis: Axis) -> Self {
        self.axis = axis;
        self
    }

    pub fn total_width(&self) -> usize {
        self.crop_ranges.iter().map(Range::len).sum()
    }

    pub fn span_plan(&self, gen: &Generator, k: usize) -> Result<SpanPlan> {
        let stack = |i: usize| gen.expand_to_stack(&self.latents[i]);
        let mut p = SpanPlan::new(gen, stack(k), stack(k + 1), self.overlap_frac)?;
        p.alpha = SpanAlpha::Ramp {
            exponent: self.ramp_exponent,
        };
        Ok(p.with_axis(self.axis))
    }

    fn validate(&self, gen: &Generator) -> Result<()> {
        let n = self.latents.len();
        if n < 2 || self.crop_ranges.len() != n - 1 {
            return Err(Error::Config(format!(
                "{} crop ranges for {n} latents",
                self.crop_ranges.len()
            )));
        }
        if self.span_width != 2 * gen.output_resolution() {
            return Err(Error::Config(format!(
                "span width {} does not match the generator",
                self.span_width
            )));
        }
        if self
            .crop_ranges
            .iter()
            .any(|c| c.end > self.span_width || c.start >= c.end)
        {
            return Err(Error::Config("crop range outside the span".into()));
        }
        Ok(())
    }
}

/// Every span of `plan` with the plan it was built from, rendered in
/// parallel. Each latent's standalone features are computed once and shared
/// by the two spans that contain it.
pub fn panorama_spans(gen: &Generator, plan: &PanoramaPlan) -> Result<(Vec<SpanPlan>, Vec<Image>)> {
    plan.validate(gen)?;
    let n = plan.latents.len();
    let span_plans: Vec<SpanPlan> = (0..n - 1)
        .map(|k| plan.span_plan(gen, k))
        .collect::<Result<_>>()?;
    for p in &span_plans {
        p.validate(gen)?;
    }
    let pures: Vec<Pure> = exec::map_indices(n, |i| {
        pure_features(gen, &gen.expand_to_stack(&plan.latents[i]))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let spans = exec::map_indices(n - 1, |k| {
        span_from_pure(gen, &pures[k], &pures[k + 1], &span_plans[k])
    })
    .into_iter()
    .collect::<Result<_>>()?;
    Ok((span_plans, spans))
}

/// Builds every span, checks that consecutive spans agree on the image they
/// share, then crops and concatenates.
pub fn knit_panorama(gen: &Generator, plan: &PanoramaPlan) -> Result<Image> {
    let (span_plans, spans) = panorama_spans(gen, plan)?;
    verify_spans(&spans, &span_plans, gen.output_resolution())?;
    let rows = along_rows(plan.axis);
    let pieces: Vec<Image> = spans
        .iter()
        .zip(&plan.crop_ranges)
        .map(|(s, c)| s.slice(c.clone(), rows))
        .collect::<Result<_>>()?;
    Image::concat(&pieces, rows)
}

/// Checks that consecutive spans agree exactly on the block of the image
/// they share (`r` is the single-image size along the axis).
pub fn verify_spans(spans: &[Image], plans: &[SpanPlan], r: usize) -> Result<()> {
    for k in 1..spans.len() {
        // image k: right image of span k-1, left image of span k
        let prev = &plans[k - 1].constrained_right;
        let next = &plans[k].constrained_left;
        if prev.is_empty() || next.is_empty() || prev.start - r >= next.end {
            continue;
        }
        let shared = prev.start - r..next.end;
        let rows = along_rows(plans[k].axis);
        let a = spans[k - 1].slice(shared.start + r..shared.end + r, rows)?;
        let b = spans[k].slice(shared, rows)?;
        let diffs: Vec<f64> = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .collect();
        let mismatched = diffs.iter().filter(|&&d| d != 0.0).count();
        if mismatched > 0 {
            return Err(Error::Knitting {
                left_span: k - 1,
                right_span: k,
                max_diff: diffs.iter().copied().fold(0.0, f64::max),
                mismatched,
            });
        }
    }
    Ok(())
}

/// Options for [`generate_panorama`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanoramaOptions {
    pub overlap_frac: f64,
    pub truncation: f64,
    pub ramp_exponent: f64,
    pub axis: Axis,
}

impl Default for PanoramaOptions {
    fn default() -> Self {
        PanoramaOptions {
            overlap_frac: DEFAULT_OVERLAP_FRAC,
            truncation: 1.0,
            ramp_exponent: 1.0,
            axis: Axis::Horizontal,
        }
    }
}

/// The `n` mapped (and optionally smoothed) latents for `seed`.
pub fn panorama_latents(
    gen: &Generator,
    n: usize,
    seed: u64,
    smoothing_sigma: f64,
    truncation: f64,
) -> Result<Vec<StyleVector>> {
    let zs = sample_latents(seed, n, gen.config().latent_dim);
    let ws = gen.map_latents(&zs, truncation)?;
    if smoothing_sigma > 0.0 {
        smooth_latents(&ws, smoothing_sigma)
    } else if smoothing_sigma == 0.0 {
        Ok(ws)
    } else {
        Err(Error::Domain(format!(
            "smoothing sigma {smoothing_sigma} is negative"
        )))
    }
}

/// Samples `n` latents, smooths them when `smoothing_sigma > 0`, and knits
/// the default plan. Returns the panorama and the plan used.
pub fn generate_panorama(
    gen: &Generator,
    n: usize,
    seed: u64,
    smoothing_sigma: f64,
    opts: &PanoramaOptions,
) -> Result<(Image, PanoramaPlan)> {
    if n < 2 {
        return Err(Error::Domain(format!(
            "a panorama needs at least 2 latents, got {n}"
        )));
    }
    let latents = panorama_latents(gen, n, seed, smoothing_sigma, opts.truncation)?;
    let mut plan =
        PanoramaPlan::new(gen, latents, opts.overlap_frac, smoothing_sigma)?.with_axis(opts.axis);
    plan.ramp_exponent = opts.ramp_exponent;
    let image = knit_panorama(gen, &plan)?;
    Ok((image, plan))
}

/// Captured features of a standalone render at `layer`, for tests and tools
/// that compare against span internals.
pub fn standalone_features(
    gen: &Generator,
    styles: &StyleStack,
    layer: usize,
) -> Result<FeatureMap> {
    let mut s = gen.synthesize(styles, &HookSet::new().capture(layer))?;
    Ok(s.captured.remove(&layer).expect("captured"))
}
