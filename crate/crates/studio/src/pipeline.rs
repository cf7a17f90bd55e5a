//! Typed requests for every endpoint and their execution against a project.
//!
//! Job requests are checked in [`JobRequest::prepare`], which loads and
//! validates every input and returns a [`Task`] closure. Running the task is
//! the only slow part, so submission can answer 400/404/409 immediately.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use styleweave::blend::{
    all_layers, render_cross_generator_blend, render_two_image_blend, Axis, BlendMode, BlendSpec,
    PixelBox,
};
use styleweave::checkpoint;
use styleweave::imageio::{decode_image_png, decode_mask_png, encode_image_png};
use styleweave::inversion::{invert, loss_trace_csv, InversionConfig};
use styleweave::latent::smooth_latents;
use styleweave::panorama::{knit_panorama, panorama_latents, PanoramaPlan, DEFAULT_OVERLAP_FRAC};
use styleweave::transfer::{
    finetune_frozen, transfer_attributes, FinetuneConfig, FinetuneRecord, FreezeSpec,
};
use styleweave::{sample_latents, Generator, Image};

use crate::assets::{AssetKind, AssetUri};
use crate::error::{Result, StudioError};
use crate::jobs::JobKind;
use crate::project::Project;

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn default_overlap() -> f64 {
    DEFAULT_OVERLAP_FRAC
}

/// Most images a single sample request may create.
pub const MAX_SAMPLE_COUNT: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRequest {
    pub seed: u64,
    #[serde(default = "one")]
    pub truncation: f64,
    #[serde(default = "one_usize")]
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResponse {
    pub style_ids: Vec<String>,
    pub image_uris: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    pub style_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderResponse {
    pub style_id: String,
    pub image_uri: String,
}

fn put_image(project: &Project, img: &Image) -> Result<String> {
    Ok(project
        .assets()
        .put(AssetKind::Images, &encode_image_png(img)?)?
        .to_string())
}

/// Maps `count` seeded latents, stores their style stacks and renders.
pub fn sample(project: &Project, req: &SampleRequest) -> Result<SampleResponse> {
    project.check_hash(req.checkpoint_hash.as_deref())?;
    if req.count == 0 || req.count > MAX_SAMPLE_COUNT {
        return Err(StudioError::bad(format!(
            "count must be in 1..={MAX_SAMPLE_COUNT}"
        )));
    }
    let gen = project.generator();
    let zs = sample_latents(req.seed, req.count, gen.config().latent_dim);
    let mut out = SampleResponse {
        style_ids: Vec::new(),
        image_uris: Vec::new(),
    };
    for w in gen.map_latents(&zs, req.truncation)? {
        let stack = gen.expand_to_stack(&w);
        out.style_ids.push(project.put_style(&stack)?);
        out.image_uris
            .push(put_image(project, &gen.render(&stack)?)?);
    }
    Ok(out)
}

pub fn render(project: &Project, req: &RenderRequest) -> Result<RenderResponse> {
    project.check_hash(req.checkpoint_hash.as_deref())?;
    let stack = project.style(&req.style_id)?;
    Ok(RenderResponse {
        style_id: req.style_id.clone(),
        image_uri: put_image(project, &project.generator().render(&stack)?)?,
    })
}

/// What a finished job produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobOutput {
    pub result_uri: String,
    /// Secondary assets such as loss traces and plans, by name.
    pub artifacts: BTreeMap<String, String>,
}

impl JobOutput {
    fn new(result_uri: String) -> Self {
        JobOutput {
            result_uri,
            artifacts: BTreeMap::new(),
        }
    }

    fn with(mut self, name: &str, uri: AssetUri) -> Self {
        self.artifacts.insert(name.to_string(), uri.to_string());
        self
    }
}

/// Prepared work, run on a worker thread.
pub type Task = Box<dyn FnOnce(&Project) -> Result<JobOutput> + Send + 'static>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendModeArg {
    #[default]
    TwoImage,
    CrossGenerator,
    /// Two-image blend with a uniform `constant_alpha`.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlendRequest {
    pub style_a: String,
    /// Second style for two-image blends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style_b: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_uri: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_alpha: Option<f64>,
    /// Defaults to every layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_set: Option<BTreeSet<usize>>,
    #[serde(default)]
    pub mode: BlendModeArg,
    /// Checkpoint asset driving branch B of a cross-generator blend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_b: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvertRequest {
    pub image_uri: String,
    #[serde(default)]
    pub config: InversionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanoramaRequest {
    /// Number of seeded latents; exclusive with `style_ids`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style_ids: Option<Vec<String>>,
    #[serde(default)]
    pub smoothing_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub truncation: f64,
    #[serde(default = "default_overlap")]
    pub overlap_frac: f64,
    #[serde(default = "one")]
    pub ramp_exponent: f64,
    #[serde(default = "horizontal")]
    pub axis: Axis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_hash: Option<String>,
}

fn horizontal() -> Axis {
    Axis::Horizontal
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferApiRequest {
    pub src: String,
    #[serde(rename = "ref")]
    pub reference: String,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    #[serde(default)]
    pub feather: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_cut: Option<usize>,
    #[serde(default = "one")]
    pub alpha_exponent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_k_dims: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneRequest {
    /// Image assets at the generator's output resolution.
    pub dataset: Vec<String>,
    #[serde(default)]
    pub freeze: FreezeSpec,
    #[serde(default)]
    pub config: FinetuneConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum JobRequest {
    Blend(BlendRequest),
    Invert(InvertRequest),
    Panorama(PanoramaRequest),
    Transfer(TransferApiRequest),
    Finetune(FinetuneRequest),
}

fn load_image(project: &Project, uri: &str) -> Result<Image> {
    let img = decode_image_png(&project.assets().get_str(uri, AssetKind::Images)?)?;
    let r = project.generator().output_resolution();
    if img.height() != r || img.width() != r {
        return Err(StudioError::bad(format!(
            "image {uri} is {}×{}, the generator renders {r}×{r}",
            img.height(),
            img.width()
        )));
    }
    Ok(img)
}

fn image_output(project: &Project, img: &Image) -> Result<JobOutput> {
    Ok(JobOutput::new(put_image(project, img)?))
}

pub fn finetune_trace_csv(trace: &[FinetuneRecord]) -> String {
    let mut out = String::from("step,d_loss,g_loss\n");
    for r in trace {
        let _ = writeln!(out, "{},{},{}", r.step, r.d_loss, r.g_loss);
    }
    out
}

impl JobRequest {
    pub fn kind(&self) -> JobKind {
        match self {
            JobRequest::Blend(_) => JobKind::Blend,
            JobRequest::Invert(_) => JobKind::Invert,
            JobRequest::Panorama(_) => JobKind::Panorama,
            JobRequest::Transfer(_) => JobKind::Transfer,
            JobRequest::Finetune(_) => JobKind::Finetune,
        }
    }

    /// The request with defaults filled in, as persisted in the job record.
    pub fn to_value(&self) -> Value {
        match self {
            JobRequest::Blend(r) => serde_json::to_value(r),
            JobRequest::Invert(r) => serde_json::to_value(r),
            JobRequest::Panorama(r) => serde_json::to_value(r),
            JobRequest::Transfer(r) => serde_json::to_value(r),
            JobRequest::Finetune(r) => serde_json::to_value(r),
        }
        .expect("requests serialize")
    }

    pub fn from_parts(kind: JobKind, value: Value) -> Result<Self> {
        Ok(match kind {
            JobKind::Blend => JobRequest::Blend(serde_json::from_value(value)?),
            JobKind::Invert => JobRequest::Invert(serde_json::from_value(value)?),
            JobKind::Panorama => JobRequest::Panorama(serde_json::from_value(value)?),
            JobKind::Transfer => JobRequest::Transfer(serde_json::from_value(value)?),
            JobKind::Finetune => JobRequest::Finetune(serde_json::from_value(value)?),
            JobKind::Render => return Err(StudioError::bad("render runs synchronously")),
        })
    }

    fn checkpoint_hash(&self) -> Option<&str> {
        match self {
            JobRequest::Blend(r) => r.checkpoint_hash.as_deref(),
            JobRequest::Invert(r) => r.checkpoint_hash.as_deref(),
            JobRequest::Panorama(r) => r.checkpoint_hash.as_deref(),
            JobRequest::Transfer(r) => r.checkpoint_hash.as_deref(),
            JobRequest::Finetune(r) => r.checkpoint_hash.as_deref(),
        }
    }

    /// Validates the request and loads its inputs.
    pub fn prepare(&self, project: &Project) -> Result<Task> {
        project.check_hash(self.checkpoint_hash())?;
        let gen = Arc::clone(project.generator());
        match self {
            JobRequest::Blend(r) => prepare_blend(project, gen, r),
            JobRequest::Invert(r) => {
                let target = load_image(project, &r.image_uri)?;
                r.config.validate()?;
                let perceptual = project.perceptual().get(&r.config.perceptual)?;
                let cfg = r.config.clone();
                Ok(Box::new(move |p: &Project| {
                    let res = invert(&gen, &target, p.gaussian()?, &cfg, perceptual.as_ref())?;
                    let assets = p.assets();
                    let trace = assets.put(
                        AssetKind::Traces,
                        loss_trace_csv(&res.loss_trace).as_bytes(),
                    )?;
                    let coeffs = assets.put(AssetKind::Coeffs, &serde_json::to_vec(&res.sigma)?)?;
                    Ok(image_output(p, &res.final_image)?
                        .with("trace", trace)
                        .with("coeffs", coeffs))
                }))
            }
            JobRequest::Panorama(r) => {
                let plan = panorama_plan(project, &gen, r)?;
                Ok(Box::new(move |p: &Project| {
                    let img = knit_panorama(&gen, &plan)?;
                    let plan_uri = p
                        .assets()
                        .put(AssetKind::Plans, &serde_json::to_vec_pretty(&plan)?)?;
                    Ok(image_output(p, &img)?.with("plan", plan_uri))
                }))
            }
            JobRequest::Transfer(r) => {
                let mut req = styleweave::transfer::TransferRequest::new(
                    &gen,
                    project.style(&r.src)?,
                    project.style(&r.reference)?,
                    r.bbox,
                    r.feather,
                );
                req.alpha_exponent = r.alpha_exponent;
                if let Some(c) = r.layer_cut {
                    req.layer_cut = c;
                }
                if let Some(k) = r.pose_k_dims {
                    req.pose_k_dims = k;
                }
                req.validate(&gen)?;
                Ok(Box::new(move |p: &Project| {
                    image_output(p, &transfer_attributes(&gen, &req)?)
                }))
            }
            JobRequest::Finetune(r) => {
                if r.dataset.is_empty() {
                    return Err(StudioError::bad(
                        "finetuning needs at least one dataset image",
                    ));
                }
                let images = r
                    .dataset
                    .iter()
                    .map(|u| load_image(project, u))
                    .collect::<Result<Vec<_>>>()?;
                r.freeze.validate(&gen)?;
                if r.config.batch_size == 0 {
                    return Err(StudioError::bad("batch_size must be positive"));
                }
                let (spec, cfg) = (r.freeze.clone(), r.config.clone());
                Ok(Box::new(move |p: &Project| {
                    // The shared generator is only read; training works on a clone.
                    let res = finetune_frozen(&gen, &images, &spec, &cfg)?;
                    let bytes = checkpoint::encode(&res.generator, &BTreeMap::new())?;
                    let ckpt = p.assets().put(AssetKind::Checkpoints, &bytes)?;
                    let trace = p
                        .assets()
                        .put(AssetKind::Traces, finetune_trace_csv(&res.trace).as_bytes())?;
                    Ok(JobOutput::new(ckpt.to_string()).with("trace", trace))
                }))
            }
        }
    }
}

fn prepare_blend(project: &Project, gen: Arc<Generator>, r: &BlendRequest) -> Result<Task> {
    let l = gen.num_layers();
    let layers = r.layer_set.clone().unwrap_or_else(|| all_layers(l));
    let spec = match (&r.mask_uri, r.constant_alpha) {
        (Some(uri), None) => {
            let mask = decode_mask_png(&project.assets().get_str(uri, AssetKind::Masks)?)?;
            let mode = match r.mode {
                BlendModeArg::TwoImage => BlendMode::TwoImage,
                BlendModeArg::CrossGenerator => BlendMode::CrossGenerator,
                BlendModeArg::Constant => {
                    return Err(StudioError::bad(
                        "constant mode takes constant_alpha, not a mask",
                    ))
                }
            };
            BlendSpec::masked(mode, layers, mask)
        }
        (None, Some(a)) => BlendSpec::constant(layers, a),
        _ => {
            return Err(StudioError::bad(
                "give exactly one of mask_uri and constant_alpha",
            ))
        }
    };
    spec.validate(l)?;
    let a = project.style(&r.style_a)?;
    if r.mode == BlendModeArg::CrossGenerator {
        if r.style_b.is_some() {
            return Err(StudioError::bad(
                "cross-generator blends render style_a only; drop style_b",
            ));
        }
        let uri = r
            .generator_b
            .as_deref()
            .ok_or_else(|| StudioError::bad("cross_generator mode needs generator_b"))?;
        let gen_b = project.load_generator(uri)?;
        if !gen.config().same_architecture(gen_b.config()) {
            return Err(StudioError::bad("generator_b has a different architecture"));
        }
        return Ok(Box::new(move |p: &Project| {
            image_output(p, &render_cross_generator_blend(&gen, &gen_b, &a, &spec)?)
        }));
    }
    if r.generator_b.is_some() {
        return Err(StudioError::bad(
            "generator_b is only used in cross_generator mode",
        ));
    }
    let id_b = r
        .style_b
        .as_deref()
        .ok_or_else(|| StudioError::bad("two-image blends need style_b"))?;
    let b = project.style(id_b)?;
    Ok(Box::new(move |p: &Project| {
        image_output(p, &render_two_image_blend(&gen, &a, &b, &spec)?)
    }))
}

fn panorama_plan(project: &Project, gen: &Generator, r: &PanoramaRequest) -> Result<PanoramaPlan> {
    if !(r.smoothing_sigma >= 0.0 && r.smoothing_sigma.is_finite()) {
        return Err(StudioError::bad(
            "smoothing_sigma must be finite and non-negative",
        ));
    }
    let latents = match (r.n, &r.style_ids) {
        (Some(n), None) => {
            if n < 2 {
                return Err(StudioError::bad(format!(
                    "a panorama needs at least 2 latents, got {n}"
                )));
            }
            panorama_latents(gen, n, r.seed, r.smoothing_sigma, r.truncation)?
        }
        (None, Some(ids)) => {
            if ids.len() < 2 {
                return Err(StudioError::bad("a panorama needs at least 2 styles"));
            }
            let mut ws = Vec::with_capacity(ids.len());
            for id in ids {
                let stack = project.style(id)?;
                if !stack.is_in_w() {
                    return Err(StudioError::bad(format!(
                        "style {id} has distinct per-layer rows"
                    )));
                }
                ws.push(stack.row(0).clone());
            }
            if r.smoothing_sigma > 0.0 {
                smooth_latents(&ws, r.smoothing_sigma)?
            } else {
                ws
            }
        }
        _ => return Err(StudioError::bad("give exactly one of n and style_ids")),
    };
    let mut plan =
        PanoramaPlan::new(gen, latents, r.overlap_frac, r.smoothing_sigma)?.with_axis(r.axis);
    if !(r.ramp_exponent > 0.0 && r.ramp_exponent.is_finite()) {
        return Err(StudioError::bad("ramp_exponent must be positive"));
    }
    plan.ramp_exponent = r.ramp_exponent;
    Ok(plan)
}
