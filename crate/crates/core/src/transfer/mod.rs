//! Pipelines built from the engines: pose-aligned attribute transfer,
//! single-image variations, frozen-affine finetuning and continuous
//! cross-generator translation.

mod discriminator;
mod finetune;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::blend::{
    all_layers, layers_up_to, make_box_mask, render_cross_generator_blend, render_two_image_blend,
    shift_blend, AlphaMask, BlendMode, BlendSpec, PixelBox, ShiftSpec,
};
use crate::error::{Error, Result};
use crate::generator::{Generator, HookSet, StyleStack, StyleVector};
use crate::latent::pose_align;
use crate::spatial::{pad_features, resize_features, PadSpec, ResizeSpec};
use crate::tensor::Image;

pub use discriminator::Discriminator;
pub use finetune::{finetune_frozen, FinetuneConfig, FinetuneRecord, FinetuneResult, FreezeSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRequest {
    pub src_styles: StyleStack,
    pub ref_styles: StyleStack,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    #[serde(default)]
    pub feather: usize,
    pub layer_cut: usize,
    #[serde(default = "default_alpha_exponent")]
    pub alpha_exponent: f64,
    pub pose_k_dims: usize,
}

fn default_alpha_exponent() -> f64 {
    1.0
}

impl TransferRequest {
    /// A request using the generator's default cut and pose width.
    pub fn new(
        gen: &Generator,
        src: StyleStack,
        reference: StyleStack,
        bbox: PixelBox,
        feather: usize,
    ) -> Self {
        TransferRequest {
            src_styles: src,
            ref_styles: reference,
            bbox,
            feather,
            layer_cut: gen.config().default_layer_cut(),
            alpha_exponent: 1.0,
            pose_k_dims: gen.config().default_pose_dims(),
        }
    }

    pub fn validate(&self, gen: &Generator) -> Result<()> {
        let r = gen.output_resolution();
        let b = &self.bbox;
        if b.x1 > r || b.y1 > r {
            return Err(Error::Range(format!("box {b:?} leaves the {r}×{r} output")));
        }
        let l = gen.num_layers();
        if self.layer_cut >= l {
            return Err(Error::Range(format!(
                "layer cut {} must be below {l}",
                self.layer_cut
            )));
        }
        if !(self.alpha_exponent >= 1.0 && self.alpha_exponent.is_finite()) {
            return Err(Error::Domain(format!(
                "alpha exponent {} must be at least 1",
                self.alpha_exponent
            )));
        }
        let dims = l * gen.config().latent_dim;
        if self.pose_k_dims > dims {
            return Err(Error::Range(format!(
                "pose_k_dims {} exceeds {dims}",
                self.pose_k_dims
            )));
        }
        Ok(())
    }

    /// The feathered box raised to `alpha_exponent`; all zero for an empty box.
    pub fn mask(&self, resolution: usize) -> Result<AlphaMask> {
        if self.bbox.is_empty() {
            return AlphaMask::constant(resolution, resolution, 0.0);
        }
        make_box_mask((resolution, resolution), self.bbox, self.feather)?.powf(self.alpha_exponent)
    }

    /// The reference with its first `pose_k_dims` values taken from the source.
    pub fn aligned_reference(&self) -> Result<StyleStack> {
        pose_align(&self.ref_styles, &self.src_styles, self.pose_k_dims)
    }
}

/// Moves the boxed region's attributes from the reference onto the source.
///
/// The reference is first put into the source's pose, then the two are
/// blended on layers `0..=layer_cut` under the feathered box mask.
pub fn transfer_attributes(gen: &Generator, req: &TransferRequest) -> Result<Image> {
    req.validate(gen)?;
    let aligned = req.aligned_reference()?;
    let mask = req.mask(gen.output_resolution())?;
    let spec = BlendSpec::masked(BlendMode::TwoImage, layers_up_to(req.layer_cut), mask);
    render_two_image_blend(gen, &req.src_styles, &aligned, &spec)
}

/// Box in output pixels used as a shift-blend mask; it is stretched to the
/// feature map it is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskBox {
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    #[serde(default)]
    pub feather: usize,
}

/// One edit applied to `f_layer` during a variation render.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum VariationStep {
    /// `dy`, `dx` are in feature pixels at `layer`.
    ShiftBlend {
        layer: usize,
        mask: MaskBox,
        dy: i64,
        dx: i64,
    },
    Pad {
        layer: usize,
        pad: PadSpec,
    },
    Resize {
        layer: usize,
        resize: ResizeSpec,
    },
}

impl VariationStep {
    pub fn layer(&self) -> usize {
        match *self {
            VariationStep::ShiftBlend { layer, .. }
            | VariationStep::Pad { layer, .. }
            | VariationStep::Resize { layer, .. } => layer,
        }
    }
}

/// Builds the hook set for `recipe`. Steps at the same layer run in order.
pub fn variation_hooks(gen: &Generator, recipe: &[VariationStep]) -> Result<HookSet> {
    let r = gen.output_resolution();
    let mut hooks = HookSet::new();
    for step in recipe {
        if step.layer() >= gen.num_layers() {
            return Err(Error::Range(format!(
                "variation step at layer {} of a {}-layer generator",
                step.layer(),
                gen.num_layers()
            )));
        }
        hooks = match *step {
            VariationStep::ShiftBlend {
                layer,
                mask,
                dy,
                dx,
            } => {
                let alpha = make_box_mask((r, r), mask.bbox, mask.feather)?;
                hooks.transform(layer, move |f| {
                    shift_blend(f, &alpha, ShiftSpec::new(dy, dx))
                })
            }
            VariationStep::Pad { layer, pad } => {
                hooks.transform(layer, move |f| pad_features(f, &pad))
            }
            VariationStep::Resize { layer, resize } => {
                hooks.transform(layer, move |f| resize_features(f, &resize))
            }
        };
    }
    Ok(hooks)
}

/// One synthesis of `w` with the recipe applied through injection hooks.
pub fn single_image_variations(
    gen: &Generator,
    w: &StyleVector,
    recipe: &[VariationStep],
) -> Result<Image> {
    let hooks = variation_hooks(gen, recipe)?;
    Ok(gen.synthesize(&gen.expand_to_stack(w), &hooks)?.image)
}

/// Cross-generator renders of `styles` at each constant alpha.
pub fn continuous_translation_sweep(
    gen_a: &Generator,
    gen_b: &Generator,
    styles: &StyleStack,
    alphas: &[f64],
    layer_set: Option<&BTreeSet<usize>>,
) -> Result<Vec<Image>> {
    let layers = layer_set
        .cloned()
        .unwrap_or_else(|| all_layers(gen_a.num_layers()));
    alphas
        .iter()
        .map(|&a| {
            render_cross_generator_blend(
                gen_a,
                gen_b,
                styles,
                &BlendSpec::constant(layers.clone(), a),
            )
        })
        .collect()
}
