//! Recovering style coefficients for a target image by gradient descent in
//! `σ` space, with a Gaussian prior and a pluggable perceptual term.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{Generator, StyleCoeffs};
use crate::kernels::{avg_pool2x, avg_pool2x_backward};
use crate::latent::{gaussian_prior_loss_grad, SigmaGaussian};
use crate::optim::{cosine_lr, Adam};
use crate::tensor::Image;

/// Name of the built-in perceptual provider.
pub const PYRAMID_PROVIDER: &str = "pyramid";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    pub steps: usize,
    pub step_size: f64,
    pub prior_weight: f64,
    pub perceptual_weight: f64,
    pub mse_weight: f64,
    pub seed: u64,
    /// Standard deviations of Gaussian jitter added to the initial `σ`
    /// (0 starts exactly at the fitted mean).
    pub init_jitter: f64,
    pub perceptual: String,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            steps: 3000,
            step_size: 0.01,
            prior_weight: 0.1,
            perceptual_weight: 1.0,
            mse_weight: 1.0,
            seed: 0,
            init_jitter: 0.0,
            perceptual: PYRAMID_PROVIDER.to_string(),
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.prior_weight, self.perceptual_weight, self.mse_weight];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(Error::Config(
                "at least one loss weight must be positive".into(),
            ));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!(
                "step_size {} must be positive",
                self.step_size
            )));
        }
        if !(self.init_jitter >= 0.0 && self.init_jitter.is_finite()) {
            return Err(Error::Config("init_jitter must be non-negative".into()));
        }
        Ok(())
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub total: f64,
    pub mse: f64,
    pub perceptual: f64,
    pub prior: f64,
}

#[derive(Debug, Clone)]
pub struct InversionResult {
    pub sigma: StyleCoeffs,
    pub loss_trace: Vec<LossRecord>,
    pub final_image: Image,
    /// Step at which `sigma` was found.
    pub best_step: usize,
}

impl InversionResult {
    pub fn best_total(&self) -> f64 {
        self.loss_trace[self.best_step].total
    }
}

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::Shape(format!(
            "images are {}×{} and {}×{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Mean squared difference over all channels and pixels.
pub fn mse_loss(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / n)
}

fn mse_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let n = a.len() as f64;
    let loss = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n;
    (
        loss,
        a.iter().zip(b).map(|(x, y)| 2.0 * (x - y) / n).collect(),
    )
}

/// A perceptual distance between images, differentiable in its first argument.
pub trait PerceptualLoss: Send + Sync {
    fn name(&self) -> &str;

    /// Loss and gradient with respect to `a` (`3×H×W`, row-major).
    fn loss_and_grad(&self, a: &Image, b: &Image) -> Result<(f64, Vec<f64>)>;

    fn loss(&self, a: &Image, b: &Image) -> Result<f64> {
        Ok(self.loss_and_grad(a, b)?.0)
    }
}

/// Sum of MSEs between 2×2 average-pooled copies at each of `octaves`
/// downsampling levels, stopping early once a side can no longer halve.
#[derive(Debug, Clone, Copy)]
pub struct PyramidMse {
    pub octaves: usize,
}

impl Default for PyramidMse {
    fn default() -> Self {
        PyramidMse { octaves: 3 }
    }
}

impl PerceptualLoss for PyramidMse {
    fn name(&self) -> &str {
        PYRAMID_PROVIDER
    }

    fn loss_and_grad(&self, a: &Image, b: &Image) -> Result<(f64, Vec<f64>)> {
        check_dims(a, b)?;
        let (mut h, mut w) = (a.height(), a.width());
        let mut pa = a.data().to_vec();
        let mut pb = b.data().to_vec();
        let mut levels = Vec::new();
        for _ in 0..self.octaves {
            if h < 2 || w < 2 || h % 2 == 1 || w % 2 == 1 {
                break;
            }
            pa = avg_pool2x(&pa, 3, h, w);
            pb = avg_pool2x(&pb, 3, h, w);
            levels.push((h, w, mse_grad(&pa, &pb)));
            h /= 2;
            w /= 2;
        }
        let mut total = 0.0;
        let mut grad = vec![0.0; a.data().len()];
        for (lh, lw, (loss, g)) in levels.into_iter().rev() {
            total += loss;
            // pull this level's gradient back to full resolution
            let mut g = g;
            let (mut ch, mut cw) = (lh / 2, lw / 2);
            while ch < a.height() {
                g = avg_pool2x_backward(&g, 3, 2 * ch, 2 * cw);
                ch *= 2;
                cw *= 2;
            }
            for (acc, v) in grad.iter_mut().zip(g) {
                *acc += v;
            }
        }
        Ok((total, grad))
    }
}

/// Named perceptual providers.
#[derive(Clone)]
pub struct PerceptualRegistry {
    providers: BTreeMap<String, Arc<dyn PerceptualLoss>>,
}

impl fmt::Debug for PerceptualRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.providers.keys()).finish()
    }
}

impl Default for PerceptualRegistry {
    fn default() -> Self {
        let mut r = PerceptualRegistry::empty();
        r.register(Arc::new(PyramidMse::default()));
        r
    }
}

impl PerceptualRegistry {
    pub fn empty() -> Self {
        PerceptualRegistry {
            providers: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, provider: Arc<dyn PerceptualLoss>) {
        self.providers.insert(provider.name().to_string(), provider);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn PerceptualLoss>> {
        self.providers
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Config(format!("no perceptual provider named `{name}`")))
    }

    pub fn names(&self) -> Vec<String> {
        self.providers.keys().cloned().collect()
    }
}

/// Looks up `provider` in `registry` and evaluates it.
pub fn perceptual_loss(
    registry: &PerceptualRegistry,
    provider: &str,
    a: &Image,
    b: &Image,
) -> Result<f64> {
    registry.get(provider)?.loss(a, b)
}

/// Total loss and its gradient with respect to `sigma`.
pub fn loss_and_grad(
    gen: &Generator,
    sigma: &StyleCoeffs,
    target: &Image,
    g: &SigmaGaussian,
    cfg: &InversionConfig,
    perceptual: &dyn PerceptualLoss,
) -> Result<(LossRecord, StyleCoeffs, Image)> {
    let trace = gen.synthesize_traced(sigma)?;
    let img = &trace.image;
    let (mse, mut grad_img) = mse_grad(img.data(), target.data());
    grad_img.iter_mut().for_each(|v| *v *= cfg.mse_weight);
    let perc = if cfg.perceptual_weight > 0.0 {
        let (p, pg) = perceptual.loss_and_grad(img, target)?;
        for (a, b) in grad_img.iter_mut().zip(pg) {
            *a += cfg.perceptual_weight * b;
        }
        p
    } else {
        0.0
    };
    let (prior, prior_grad) = gaussian_prior_loss_grad(sigma, g)?;
    let mut grad = gen.backward(&trace, &grad_img, false).coeffs;
    for (a, b) in grad
        .per_layer
        .iter_mut()
        .flatten()
        .zip(prior_grad.per_layer.iter().flatten())
    {
        *a += cfg.prior_weight * b;
    }
    let record = LossRecord {
        step: 0,
        total: cfg.mse_weight * mse + cfg.perceptual_weight * perc + cfg.prior_weight * prior,
        mse,
        perceptual: perc,
        prior,
    };
    Ok((record, grad, trace.image))
}

/// Inverts `target`, starting from `g.mean`. The returned `σ` is the best by
/// total loss over all `steps + 1` evaluations.
pub fn invert(
    gen: &Generator,
    target: &Image,
    g: &SigmaGaussian,
    cfg: &InversionConfig,
    perceptual: &dyn PerceptualLoss,
) -> Result<InversionResult> {
    cfg.validate()?;
    let res = gen.output_resolution();
    if target.height() != res || target.width() != res {
        return Err(Error::Shape(format!(
            "target is {}×{}, generator renders {res}×{res}",
            target.height(),
            target.width()
        )));
    }
    let widths = gen.config().coeff_widths();
    if g.widths() != widths {
        return Err(Error::Shape(
            "sigma Gaussian was fitted for another generator".into(),
        ));
    }

    let mut flat = g.mean.flatten();
    if cfg.init_jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for (s, v) in flat.iter_mut().zip(g.variance.flatten()) {
            let n: f64 = StandardNormal.sample(&mut rng);
            *s += cfg.init_jitter * v.sqrt() * n;
        }
    }
    let mut adam = Adam::with_betas(flat.len(), 0.9, 0.99);
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut best: Option<(usize, StyleCoeffs, Image)> = None;
    for step in 0..=cfg.steps {
        let sigma = StyleCoeffs::from_flat(&flat, &widths)?;
        let (mut rec, grad, image) = loss_and_grad(gen, &sigma, target, g, cfg, perceptual)?;
        rec.step = step;
        trace.push(rec);
        let grad = grad.flatten();
        if !rec.total.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step, trace });
        }
        if best
            .as_ref()
            .is_none_or(|(b, _, _)| rec.total < trace[*b].total)
        {
            best = Some((step, sigma, image));
        }
        if step < cfg.steps {
            adam.step(&mut flat, &grad, cosine_lr(cfg.step_size, step, cfg.steps));
        }
    }
    let (best_step, sigma, final_image) = best.expect("at least one step");
    Ok(InversionResult {
        sigma,
        loss_trace: trace,
        final_image,
        best_step,
    })
}

/// The trace as CSV with header `step,total,mse,perceptual,prior`.
pub fn loss_trace_csv(trace: &[LossRecord]) -> String {
    let mut out = String::from("step,total,mse,perceptual,prior\n");
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.step, r.total, r.mse, r.perceptual, r.prior
        ));
    }
    out
}

pub fn write_loss_trace_csv(trace: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, loss_trace_csv(trace)).map_err(|e| Error::io(path, e))
}
