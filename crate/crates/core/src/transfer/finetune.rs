//! Adversarial finetuning with frozen mapping and affine layers.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::exec;
use crate::generator::{sample_latents, Generator, Param, ParamGroup, StyleVector, SynthesisTrace};
use crate::optim::Adam;
use crate::tensor::Image;

/// Which generator parameters finetuning may change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeSpec {
    #[serde(default = "yes")]
    pub freeze_mapping: bool,
    #[serde(default = "yes")]
    pub freeze_affine: bool,
    /// Synthesis layers whose conv, bias, noise (and, when unfrozen, affine)
    /// parameters train. `None` means every layer.
    #[serde(default)]
    pub trainable_layer_set: Option<BTreeSet<usize>>,
}

fn yes() -> bool {
    true
}

impl Default for FreezeSpec {
    fn default() -> Self {
        FreezeSpec {
            freeze_mapping: true,
            freeze_affine: true,
            trainable_layer_set: None,
        }
    }
}

impl FreezeSpec {
    pub fn only_layers(layers: impl IntoIterator<Item = usize>) -> Self {
        FreezeSpec {
            trainable_layer_set: Some(layers.into_iter().collect()),
            ..Self::default()
        }
    }

    fn layer_trains(&self, layer: usize) -> bool {
        self.trainable_layer_set
            .as_ref()
            .is_none_or(|s| s.contains(&layer))
    }

    /// Whether `name` is updated. The tracked mean style is a statistic and
    /// never trains.
    pub fn is_trainable(&self, gen: &Generator, name: &str) -> bool {
        if name == "mapping.w_avg" {
            return false;
        }
        match gen.param_group(name) {
            Some(ParamGroup::Mapping) => !self.freeze_mapping,
            Some(ParamGroup::Affine(i)) => !self.freeze_affine && self.layer_trains(i),
            Some(ParamGroup::Synthesis(i)) => self.layer_trains(i),
            None => false,
        }
    }

    pub fn trainable_names(&self, gen: &Generator) -> Vec<String> {
        gen.named_params()
            .into_iter()
            .map(|(n, _)| n)
            .filter(|n| self.is_trainable(gen, n))
            .collect()
    }

    pub fn validate(&self, gen: &Generator) -> Result<()> {
        if let Some(&l) = self
            .trainable_layer_set
            .iter()
            .flatten()
            .find(|&&l| l >= gen.num_layers())
        {
            return Err(Error::Config(format!(
                "trainable layer {l} outside the generator"
            )));
        }
        if self.trainable_names(gen).is_empty() {
            return Err(Error::Config(
                "freeze spec leaves no trainable parameter".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub g_lr: f64,
    pub d_lr: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            steps: 100,
            seed: 0,
            batch_size: 4,
            g_lr: 2e-3,
            d_lr: 2e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneResult {
    pub generator: Generator,
    pub trace: Vec<FinetuneRecord>,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-sample generator pass kept for the backward sweep.
struct Fake {
    z: Vec<f64>,
    w: StyleVector,
    trace: SynthesisTrace,
}

fn add_into(acc: &mut [f64], v: &[f64], scale: f64) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += scale * b;
    }
}

/// Generator gradients of `Σ dimage · image` for one fake, restricted to
/// trainable parameters.
fn generator_grads(
    gen: &Generator,
    spec: &FreezeSpec,
    fake: &Fake,
    grad_image: &[f64],
) -> BTreeMap<String, Vec<f64>> {
    let grads = gen.backward(&fake.trace, grad_image, true);
    let mut out = grads.params;
    let need_affine = !spec.freeze_affine;
    let need_mapping = !spec.freeze_mapping;
    if need_affine || need_mapping {
        let stack = gen.expand_to_stack(&fake.w);
        let (rows, affine) = gen.coeffs_backward(&stack, &grads.coeffs);
        out.extend(affine);
        if need_mapping {
            let mut gw = vec![0.0; fake.w.len()];
            for r in &rows {
                add_into(&mut gw, r, 1.0);
            }
            let trace = gen.mapping_traced(&fake.z);
            out.extend(gen.mapping_backward(&trace, &gw));
        }
    }
    out.retain(|name, _| spec.is_trainable(gen, name));
    out
}

/// Finetunes a clone of `gen` on `images` with a non-saturating GAN loss.
///
/// Only parameters that `spec` marks trainable are touched; every other
/// parameter of the returned generator is bitwise equal to `gen`'s.
pub fn finetune_frozen(
    gen: &Generator,
    images: &[Image],
    spec: &FreezeSpec,
    cfg: &FinetuneConfig,
) -> Result<FinetuneResult> {
    spec.validate(gen)?;
    if images.is_empty() {
        return Err(Error::Domain("finetuning needs at least one image".into()));
    }
    let r = gen.output_resolution();
    if let Some(bad) = images.iter().find(|i| i.height() != r || i.width() != r) {
        return Err(Error::Shape(format!(
            "dataset image is {}×{}, generator renders {r}×{r}",
            bad.height(),
            bad.width()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut out = gen.clone();
    if cfg.steps == 0 {
        return Ok(FinetuneResult {
            generator: out,
            trace: Vec::new(),
        });
    }

    let names = spec.trainable_names(gen);
    let sizes: Vec<usize> = names.iter().map(|n| gen.param(n).unwrap().len()).collect();
    let total: usize = sizes.iter().sum();
    let mut g_opt = Adam::with_betas(total, 0.0, 0.99);
    let mut disc = Discriminator::new(cfg.seed ^ 0xD15C);
    let mut d_opt = Adam::with_betas(disc.params.len(), 0.0, 0.99);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = gen.config().latent_dim;
    let b = cfg.batch_size;
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let reals: Vec<&Image> = (0..b)
            .map(|_| &images[rng.random_range(0..images.len())])
            .collect();
        let zs = sample_latents(rng.random(), b, d);
        let fakes: Vec<Fake> = exec::map_indices(b, |i| -> Result<Fake> {
            let w = out.map_latent(&zs[i], 1.0)?;
            let coeffs = out.styles_to_coeffs(&out.expand_to_stack(&w))?;
            Ok(Fake {
                z: zs[i].values().to_vec(),
                w,
                trace: out.synthesize_traced(&coeffs)?,
            })
        })
        .into_iter()
        .collect::<Result<_>>()?;

        // Critic step on softplus(D(fake)) + softplus(-D(real)).
        let per_sample: Vec<(f64, Vec<f64>)> = exec::map_indices(2 * b, |i| {
            let (img, real) = if i < b {
                (reals[i], true)
            } else {
                (&fakes[i - b].trace.image, false)
            };
            let (logit, t) = disc.forward(img);
            let (loss, dl) = if real {
                (softplus(-logit), -sigmoid(-logit))
            } else {
                (softplus(logit), sigmoid(logit))
            };
            (loss, disc.backward(&t, dl).0)
        });
        let mut d_grad = vec![0.0; disc.params.len()];
        let mut d_loss = 0.0;
        for (loss, g) in &per_sample {
            d_loss += loss / b as f64;
            add_into(&mut d_grad, g, 1.0 / b as f64);
        }
        d_opt.step(&mut disc.params, &d_grad, cfg.d_lr);

        // Generator step on softplus(-D(fake)) against the updated critic.
        let per_fake: Vec<(f64, BTreeMap<String, Vec<f64>>)> = exec::map_indices(b, |i| {
            let (logit, t) = disc.forward(&fakes[i].trace.image);
            let (_, grad_image) = disc.backward(&t, -sigmoid(-logit));
            (
                softplus(-logit),
                generator_grads(&out, spec, &fakes[i], &grad_image),
            )
        });
        let mut flat = vec![0.0; total];
        let mut g_loss = 0.0;
        for (loss, grads) in &per_fake {
            g_loss += loss / b as f64;
            let mut off = 0;
            for (name, &len) in names.iter().zip(&sizes) {
                if let Some(g) = grads.get(name) {
                    add_into(&mut flat[off..off + len], g, 1.0 / b as f64);
                }
                off += len;
            }
        }
        if !(d_loss.is_finite() && g_loss.is_finite()) {
            return Err(Error::Diverged { step });
        }
        let delta = g_opt.delta(&flat, cfg.g_lr);
        let mut off = 0;
        for (name, &len) in names.iter().zip(&sizes) {
            let p = out.param(name).unwrap();
            let data = p
                .data
                .iter()
                .zip(&delta[off..off + len])
                .map(|(&v, dv)| (v as f64 + dv) as f32)
                .collect();
            out.set_param(name, Param::new(p.shape.clone(), data)?)?;
            off += len;
        }
        trace.push(FinetuneRecord {
            step,
            d_loss,
            g_loss,
        });
    }
    Ok(FinetuneResult {
        generator: out,
        trace,
    })
}
