//! A small deterministic style-based generator with per-layer hooks.
//!
//! Mapping network `z → w`, per-layer affine styles `w → σ`, and a stack of
//! modulated/demodulated 3×3 convolutions with nearest-neighbour upsampling.
//! A single modulated 1×1 RGB head reads the last layer and `tanh` maps the
//! result into `[-1, 1]`. Every layer is fully convolutional, so feature
//! maps of any spatial size can be injected mid-network.

mod backward;
mod config;
mod hooks;
mod styles;

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use backward::{MappingTrace, SynthesisGrads, SynthesisTrace};
pub use config::GeneratorConfig;
pub use hooks::{FeatureTransform, HookSet, Intervention};
pub use styles::{LatentCode, StyleCoeffs, StyleStack, StyleVector};

use crate::error::{Error, Result};
use crate::exec;
use crate::kernels;
use crate::tensor::{FeatureMap, Image, Tensor};

/// Number of mapped samples averaged into the tracked mean style.
const W_AVG_SAMPLES: usize = 1024;
const NOISE_STRENGTH_INIT: f32 = 0.1;
/// Scale of the affine (style) weights relative to 1/sqrt(fan_in); styles are
/// `bias 1 + gain·N(0, |w|²/d)`.
const AFFINE_GAIN: f64 = 0.5;

/// A named, shaped array of `f32` parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Param {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "{} values for shape {shape:?}",
                data.len()
            )));
        }
        Ok(Param { shape, data })
    }

    fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Param {
            shape,
            data: vec![0.0; n],
        }
    }

    fn filled(shape: Vec<usize>, v: f32) -> Self {
        let n = shape.iter().product();
        Param {
            shape,
            data: vec![v; n],
        }
    }

    fn normal(shape: Vec<usize>, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                (v * scale) as f32
            })
            .collect();
        Param { shape, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Fully connected `out × in` layer.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense {
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    fn new(out: usize, inp: usize, gain: f64, bias: f32, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            weight: Param::normal(vec![out, inp], gain / (inp as f64).sqrt(), rng),
            bias: Param::filled(vec![out], bias),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (out, inp) = (self.out_dim(), self.in_dim());
        (0..out)
            .map(|o| {
                let row = &self.weight.data[o * inp..(o + 1) * inp];
                let dot: f64 = row.iter().zip(x).map(|(w, v)| *w as f64 * v).sum();
                dot + self.bias.data[o] as f64
            })
            .collect()
    }

    /// Returns `(d_weight, d_bias, d_input)`.
    pub fn backward(&self, x: &[f64], grad: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (out, inp) = (self.out_dim(), self.in_dim());
        let mut dw = vec![0.0; out * inp];
        let mut dx = vec![0.0; inp];
        for o in 0..out {
            for i in 0..inp {
                dw[o * inp + i] = grad[o] * x[i];
                dx[i] += grad[o] * self.weight.data[o * inp + i] as f64;
            }
        }
        (dw, grad.to_vec(), dx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SynthesisLayer {
    pub affine: Dense,
    pub weight: Param,
    pub bias: Param,
    pub noise_strength: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RgbHead {
    pub affine: Dense,
    pub weight: Param,
    pub bias: Param,
}

/// Which part of the network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Mapping network, including the tracked mean style.
    Mapping,
    /// Affine layer producing `σ` for the given synthesis layer.
    Affine(usize),
    /// Convolution, bias, noise, constant or RGB weights of a synthesis layer.
    Synthesis(usize),
}

/// An immutable style-based generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    config: GeneratorConfig,
    pub(crate) mapping: Vec<Dense>,
    pub(crate) w_avg: Param,
    pub(crate) constant: Param,
    pub(crate) layers: Vec<SynthesisLayer>,
    pub(crate) rgb: RgbHead,
}

/// Style input for synthesis.
#[derive(Debug, Clone, Copy)]
pub enum Styles<'a> {
    Stack(&'a StyleStack),
    Coeffs(&'a StyleCoeffs),
}

impl<'a> From<&'a StyleStack> for Styles<'a> {
    fn from(s: &'a StyleStack) -> Self {
        Styles::Stack(s)
    }
}

impl<'a> From<&'a StyleCoeffs> for Styles<'a> {
    fn from(s: &'a StyleCoeffs) -> Self {
        Styles::Coeffs(s)
    }
}

/// Result of one synthesis pass.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub image: Image,
    pub captured: BTreeMap<usize, FeatureMap>,
}

impl Generator {
    /// Builds a generator whose parameters are a pure function of `config`.
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let d = config.latent_dim;
        let mapping = (0..config.mapping_layers)
            .map(|_| Dense::new(d, d, 1.0, 0.0, &mut rng))
            .collect();
        let c0 = config.channels_per_layer[0];
        let b = config.base_resolution;
        let constant = Param::normal(vec![c0, b, b], 1.0, &mut rng);
        let layers = (0..config.num_layers)
            .map(|i| {
                let (cin, cout) = (config.in_channels(i), config.out_channels(i));
                SynthesisLayer {
                    affine: Dense::new(cin, d, AFFINE_GAIN, 1.0, &mut rng),
                    weight: Param::normal(
                        vec![cout, cin, 3, 3],
                        1.0 / ((cin * 9) as f64).sqrt(),
                        &mut rng,
                    ),
                    bias: Param::zeros(vec![cout]),
                    noise_strength: Param::filled(vec![1], NOISE_STRENGTH_INIT),
                }
            })
            .collect();
        let c_last = *config.channels_per_layer.last().unwrap();
        let rgb = RgbHead {
            affine: Dense::new(c_last, d, AFFINE_GAIN, 1.0, &mut rng),
            weight: Param::normal(
                vec![3, c_last, 1, 1],
                1.0 / (c_last as f64).sqrt(),
                &mut rng,
            ),
            bias: Param::zeros(vec![3]),
        };
        let mut gen = Generator {
            config,
            mapping,
            w_avg: Param::zeros(vec![d]),
            constant,
            layers,
            rgb,
        };
        gen.w_avg = gen.estimate_w_avg();
        Ok(gen)
    }

    fn estimate_w_avg(&self) -> Param {
        let d = self.config.latent_dim;
        let zs = sample_latents(self.config.rng_seed ^ 0x5EED_A7E5, W_AVG_SAMPLES, d);
        let ws = exec::map_indices(zs.len(), |i| self.mapping_forward(zs[i].values()));
        let mut mean = vec![0.0; d];
        for w in &ws {
            for (m, v) in mean.iter_mut().zip(w) {
                *m += v;
            }
        }
        Param {
            shape: vec![d],
            data: mean.iter().map(|m| (m / ws.len() as f64) as f32).collect(),
        }
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn num_layers(&self) -> usize {
        self.config.num_layers
    }

    pub fn output_resolution(&self) -> usize {
        self.config.output_resolution()
    }

    /// The tracked mean style `w̄`.
    pub fn mean_style(&self) -> StyleVector {
        StyleVector::new(self.w_avg.data.iter().map(|&v| v as f64).collect())
            .expect("w_avg is finite")
    }

    pub(crate) fn mapping_forward(&self, z: &[f64]) -> Vec<f64> {
        let ms = (z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64 + 1e-8).sqrt();
        let mut x: Vec<f64> = z.iter().map(|v| v / ms).collect();
        for layer in &self.mapping {
            x = layer.forward(&x).into_iter().map(kernels::lrelu).collect();
        }
        x
    }

    /// `w = w̄ + truncation·(MLP(z) − w̄)`.
    pub fn map_latent(&self, z: &LatentCode, truncation: f64) -> Result<StyleVector> {
        if z.len() != self.config.latent_dim {
            return Err(Error::Shape(format!(
                "latent has {} entries, generator expects {}",
                z.len(),
                self.config.latent_dim
            )));
        }
        if !(0.0..=1.0).contains(&truncation) {
            return Err(Error::Domain(format!(
                "truncation {truncation} outside [0, 1]"
            )));
        }
        let mapped = self.mapping_forward(z.values());
        let w = self
            .w_avg
            .data
            .iter()
            .zip(&mapped)
            .map(|(&avg, &m)| crate::tensor::lerp(avg as f64, m, truncation))
            .collect();
        StyleVector::new(w)
    }

    pub fn map_latents(&self, zs: &[LatentCode], truncation: f64) -> Result<Vec<StyleVector>> {
        exec::map_indices(zs.len(), |i| self.map_latent(&zs[i], truncation))
            .into_iter()
            .collect()
    }

    pub fn expand_to_stack(&self, w: &StyleVector) -> StyleStack {
        StyleStack::expand(w, self.config.num_layers)
    }

    /// Applies each layer's affine transform to its row of `stack`.
    pub fn styles_to_coeffs(&self, stack: &StyleStack) -> Result<StyleCoeffs> {
        if stack.num_rows() != self.config.num_layers || stack.row_width() != self.config.latent_dim
        {
            return Err(Error::Domain(format!(
                "style stack is {}×{}, generator expects {}×{}",
                stack.num_rows(),
                stack.row_width(),
                self.config.num_layers,
                self.config.latent_dim
            )));
        }
        let last = self.config.num_layers - 1;
        let per_layer = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let w = stack.row(i).values();
                let mut s = layer.affine.forward(w);
                if i == last {
                    s.extend(self.rgb.affine.forward(w));
                }
                s
            })
            .collect();
        Ok(StyleCoeffs::new(per_layer))
    }

    fn check_coeffs(&self, coeffs: &StyleCoeffs) -> Result<()> {
        if coeffs.widths() != self.config.coeff_widths() {
            return Err(Error::Domain(format!(
                "coefficient widths {:?} do not match generator {:?}",
                coeffs.widths(),
                self.config.coeff_widths()
            )));
        }
        if !coeffs.is_finite() {
            return Err(Error::Domain("style coefficients are not finite".into()));
        }
        Ok(())
    }

    pub fn resolve_styles(&self, styles: Styles<'_>) -> Result<StyleCoeffs> {
        match styles {
            Styles::Stack(s) => self.styles_to_coeffs(s),
            Styles::Coeffs(c) => {
                self.check_coeffs(c)?;
                Ok(c.clone())
            }
        }
    }

    /// The learned constant input, `1×C₀×b×b`.
    pub fn constant_input(&self) -> Tensor {
        let b = self.config.base_resolution;
        Tensor::from_vec(
            [1, self.config.channels_per_layer[0], b, b],
            self.constant.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("constant shape")
    }

    pub(crate) fn conv_style<'c>(&self, layer: usize, coeffs: &'c StyleCoeffs) -> &'c [f64] {
        &coeffs.per_layer[layer][..self.config.in_channels(layer)]
    }

    pub(crate) fn rgb_style<'c>(&self, coeffs: &'c StyleCoeffs) -> &'c [f64] {
        let last = self.config.num_layers - 1;
        &coeffs.per_layer[last][self.config.in_channels(last)..]
    }

    /// Runs synthesis layer `layer` on `input` (the previous feature map, or
    /// the constant for layer 0). Any spatial size is accepted.
    pub fn forward_layer(
        &self,
        layer: usize,
        input: &Tensor,
        coeffs: &StyleCoeffs,
    ) -> Result<Tensor> {
        Ok(self.layer_pass(layer, input, coeffs)?.0)
    }

    /// Returns `(output, conv_input, pre_activation, modulated kernel)`.
    pub(crate) fn layer_pass(
        &self,
        layer: usize,
        input: &Tensor,
        coeffs: &StyleCoeffs,
    ) -> Result<(Tensor, Tensor, Tensor, kernels::Modulated)> {
        let cfg = &self.config;
        if layer >= cfg.num_layers {
            return Err(Error::Range(format!("layer {layer} of {}", cfg.num_layers)));
        }
        let (cin, cout) = (cfg.in_channels(layer), cfg.out_channels(layer));
        let [b, c, h, w] = input.shape();
        if b != 1 || c != cin {
            return Err(Error::Injection {
                layer: layer.saturating_sub(1),
                reason: format!(
                    "layer {layer} expects 1×{cin}×H×W input, got {:?}",
                    input.shape()
                ),
            });
        }
        let (conv_in, h, w) = if cfg.upsamples_at(layer) {
            let up = kernels::upsample2x(input.data(), cin, h, w);
            (Tensor::from_vec([1, cin, 2 * h, 2 * w], up)?, 2 * h, 2 * w)
        } else {
            (input.clone(), h, w)
        };
        let p = &self.layers[layer];
        let m = kernels::modulate(
            &p.weight.data,
            self.conv_style(layer, coeffs),
            cout,
            cin,
            3,
            true,
        );
        let mut pre = kernels::conv2d(conv_in.data(), cin, h, w, &m.weight, cout, 3);
        let noise = kernels::noise_plane(cfg.rng_seed, layer, h, w);
        let strength = p.noise_strength.data[0] as f64;
        let hw = h * w;
        for o in 0..cout {
            let bias = p.bias.data[o] as f64;
            for (v, n) in pre[o * hw..(o + 1) * hw].iter_mut().zip(&noise) {
                *v += strength * n + bias;
            }
        }
        let out: Vec<f64> = pre.iter().map(|&v| kernels::lrelu(v)).collect();
        Ok((
            Tensor::from_vec([1, cout, h, w], out)?,
            conv_in,
            Tensor::from_vec([1, cout, h, w], pre)?,
            m,
        ))
    }

    /// Pre-`tanh` RGB output of the head applied to the last feature map.
    pub fn rgb_head(&self, features: &Tensor, coeffs: &StyleCoeffs) -> Result<Tensor> {
        Ok(self.rgb_pass(features, coeffs)?.0)
    }

    pub(crate) fn rgb_pass(
        &self,
        features: &Tensor,
        coeffs: &StyleCoeffs,
    ) -> Result<(Tensor, kernels::Modulated)> {
        let last = self.config.num_layers - 1;
        let c = self.config.out_channels(last);
        let [b, fc, h, w] = features.shape();
        if b != 1 || fc != c {
            return Err(Error::Injection {
                layer: last,
                reason: format!("RGB head expects 1×{c}×H×W, got {:?}", features.shape()),
            });
        }
        let m = kernels::modulate(
            &self.rgb.weight.data,
            self.rgb_style(coeffs),
            3,
            c,
            1,
            false,
        );
        let mut rgb = kernels::conv2d(features.data(), c, h, w, &m.weight, 3, 1);
        for o in 0..3 {
            let bias = self.rgb.bias.data[o] as f64;
            for v in &mut rgb[o * h * w..(o + 1) * h * w] {
                *v += bias;
            }
        }
        Ok((Tensor::from_vec([1, 3, h, w], rgb)?, m))
    }

    /// Maps a pre-`tanh` RGB tensor into an image.
    pub fn finish_image(rgb: &Tensor) -> Result<Image> {
        let t = Tensor::from_vec(rgb.shape(), rgb.data().iter().map(|v| v.tanh()).collect())?;
        Image::from_tensor(&t)
    }

    /// One synthesis pass with capture/injection hooks.
    pub fn synthesize<'a>(
        &self,
        styles: impl Into<Styles<'a>>,
        hooks: &HookSet,
    ) -> Result<Synthesis> {
        let coeffs = self.resolve_styles(styles.into())?;
        hooks.validate(self.config.num_layers)?;
        let mut x = self.constant_input();
        let mut captured = BTreeMap::new();
        for i in 0..self.config.num_layers {
            x = self.forward_layer(i, &x, &coeffs)?;
            if hooks.captures(i) {
                captured.insert(i, FeatureMap::new(i, x.clone()));
            }
            for intervention in hooks.interventions(i) {
                let current = FeatureMap::new(i, x);
                let next = intervention.apply(&current)?;
                self.check_injected(i, &next)?;
                x = next.data;
            }
        }
        let rgb = self.rgb_head(&x, &coeffs)?;
        Ok(Synthesis {
            image: Self::finish_image(&rgb)?,
            captured,
        })
    }

    /// Plain render without hooks.
    pub fn render<'a>(&self, styles: impl Into<Styles<'a>>) -> Result<Image> {
        Ok(self.synthesize(styles, &HookSet::new())?.image)
    }

    fn check_injected(&self, layer: usize, f: &FeatureMap) -> Result<()> {
        let want = self.config.out_channels(layer);
        let [b, c, h, w] = f.shape();
        let reason = if f.layer_index != layer {
            Some(format!("feature map is tagged for layer {}", f.layer_index))
        } else if c != want {
            Some(format!("{c} channels, layer produces {want}"))
        } else if b != 1 {
            Some(format!("batch {b}, synthesis runs one sample"))
        } else if h == 0 || w == 0 {
            Some("empty spatial extent".to_string())
        } else if !f.data.is_finite() {
            Some("non-finite values".to_string())
        } else {
            None
        };
        match reason {
            Some(reason) => Err(Error::Injection { layer, reason }),
            None => Ok(()),
        }
    }

    /// All parameters in canonical order.
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (j, fc) in self.mapping.iter().enumerate() {
            out.push((format!("mapping.fc{j}.weight"), &fc.weight));
            out.push((format!("mapping.fc{j}.bias"), &fc.bias));
        }
        out.push(("mapping.w_avg".into(), &self.w_avg));
        out.push(("synthesis.const".into(), &self.constant));
        for (i, l) in self.layers.iter().enumerate() {
            out.push((
                format!("synthesis.layer{i}.affine.weight"),
                &l.affine.weight,
            ));
            out.push((format!("synthesis.layer{i}.affine.bias"), &l.affine.bias));
            out.push((format!("synthesis.layer{i}.conv.weight"), &l.weight));
            out.push((format!("synthesis.layer{i}.conv.bias"), &l.bias));
            out.push((
                format!("synthesis.layer{i}.conv.noise_strength"),
                &l.noise_strength,
            ));
        }
        out.push((
            "synthesis.torgb.affine.weight".into(),
            &self.rgb.affine.weight,
        ));
        out.push(("synthesis.torgb.affine.bias".into(), &self.rgb.affine.bias));
        out.push(("synthesis.torgb.weight".into(), &self.rgb.weight));
        out.push(("synthesis.torgb.bias".into(), &self.rgb.bias));
        out
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.named_params()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
    }

    pub(crate) fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        let layer_field = |rest: &str| -> Option<(usize, String)> {
            let rest = rest.strip_prefix("synthesis.layer")?;
            let (idx, field) = rest.split_once('.')?;
            Some((idx.parse().ok()?, field.to_string()))
        };
        if let Some(rest) = name.strip_prefix("mapping.fc") {
            let (idx, field) = rest.split_once('.')?;
            let fc = self.mapping.get_mut(idx.parse::<usize>().ok()?)?;
            return match field {
                "weight" => Some(&mut fc.weight),
                "bias" => Some(&mut fc.bias),
                _ => None,
            };
        }
        match name {
            "mapping.w_avg" => return Some(&mut self.w_avg),
            "synthesis.const" => return Some(&mut self.constant),
            "synthesis.torgb.affine.weight" => return Some(&mut self.rgb.affine.weight),
            "synthesis.torgb.affine.bias" => return Some(&mut self.rgb.affine.bias),
            "synthesis.torgb.weight" => return Some(&mut self.rgb.weight),
            "synthesis.torgb.bias" => return Some(&mut self.rgb.bias),
            _ => {}
        }
        let (i, field) = layer_field(name)?;
        let l = self.layers.get_mut(i)?;
        match field.as_str() {
            "affine.weight" => Some(&mut l.affine.weight),
            "affine.bias" => Some(&mut l.affine.bias),
            "conv.weight" => Some(&mut l.weight),
            "conv.bias" => Some(&mut l.bias),
            "conv.noise_strength" => Some(&mut l.noise_strength),
            _ => None,
        }
    }

    /// Classifies a canonical parameter name.
    pub fn param_group(&self, name: &str) -> Option<ParamGroup> {
        let last = self.config.num_layers - 1;
        if name.starts_with("mapping.") {
            return Some(ParamGroup::Mapping);
        }
        if name == "synthesis.const" {
            return Some(ParamGroup::Synthesis(0));
        }
        if let Some(rest) = name.strip_prefix("synthesis.torgb.") {
            return Some(if rest.starts_with("affine.") {
                ParamGroup::Affine(last)
            } else {
                ParamGroup::Synthesis(last)
            });
        }
        let rest = name.strip_prefix("synthesis.layer")?;
        let (idx, field) = rest.split_once('.')?;
        let i: usize = idx.parse().ok()?;
        Some(if field.starts_with("affine.") {
            ParamGroup::Affine(i)
        } else {
            ParamGroup::Synthesis(i)
        })
    }

    /// Synthesis layer a parameter belongs to, if any.
    pub fn param_layer(&self, name: &str) -> Option<usize> {
        match self.param_group(name)? {
            ParamGroup::Mapping => None,
            ParamGroup::Affine(i) | ParamGroup::Synthesis(i) => Some(i),
        }
    }

    /// Overwrites parameter `name`; the shape must match.
    pub fn set_param(&mut self, name: &str, value: Param) -> Result<()> {
        let slot = self
            .param_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if slot.shape != value.shape {
            return Err(Error::Shape(format!(
                "parameter {name} has shape {:?}, got {:?}",
                slot.shape, value.shape
            )));
        }
        *slot = value;
        Ok(())
    }

    /// A generator with `other`'s parameters at `layer_set` and `self`'s
    /// everywhere else. The mapping network always comes from `self`.
    pub fn swap_weights(
        &self,
        other: &Generator,
        layer_set: &BTreeSet<usize>,
    ) -> Result<Generator> {
        if !self.config.same_architecture(&other.config) {
            return Err(Error::Config(
                "weight swap needs identical architectures".into(),
            ));
        }
        let mut out = self.clone();
        for (name, p) in other.named_params() {
            if self
                .param_layer(&name)
                .is_some_and(|l| layer_set.contains(&l))
            {
                out.set_param(&name, p.clone())?;
            }
        }
        Ok(out)
    }
}

/// Draws `n` standard-normal latent codes from a seeded stream.
pub fn sample_latents(seed: u64, n: usize, dim: usize) -> Vec<LatentCode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            LatentCode::new((0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
                .expect("normal samples are finite")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> Generator {
        Generator::new(GeneratorConfig::desk(11)).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = desk();
        let b = desk();
        for ((na, pa), (nb, pb)) in a.named_params().into_iter().zip(b.named_params()) {
            assert_eq!(na, nb);
            let ba: Vec<u32> = pa.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = pb.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ba, bb, "{na}");
        }
        assert_ne!(a, Generator::new(GeneratorConfig::desk(12)).unwrap());
    }

    #[test]
    fn bad_config_is_rejected() {
        let mut cfg = GeneratorConfig::desk(0);
        cfg.channels_per_layer.push(8);
        assert!(matches!(Generator::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn truncation_zero_gives_mean() {
        let g = desk();
        let z = &sample_latents(3, 1, 64)[0];
        assert_eq!(g.map_latent(z, 0.0).unwrap(), g.mean_style());
        assert_eq!(g.map_latent(z, 1.0).unwrap(), g.map_latent(z, 1.0).unwrap());
        assert!(g.map_latent(z, 1.5).is_err());
    }

    #[test]
    fn batch_mapping_matches_loop() {
        let g = desk();
        let zs = sample_latents(4, 3, 64);
        let batch = g.map_latents(&zs, 0.7).unwrap();
        for (z, w) in zs.iter().zip(&batch) {
            assert_eq!(&g.map_latent(z, 0.7).unwrap(), w);
        }
    }

    #[test]
    fn param_names_are_unique_and_resolvable() {
        let mut g = desk();
        let names: Vec<String> = g.named_params().into_iter().map(|(n, _)| n).collect();
        let set: BTreeSet<&String> = names.iter().collect();
        assert_eq!(set.len(), names.len());
        for n in &names {
            assert!(g.param_mut(n).is_some(), "{n}");
            assert!(g.param_group(n).is_some(), "{n}");
        }
    }

    #[test]
    fn output_is_in_range_and_sized() {
        let g = desk();
        let w = g.map_latent(&sample_latents(1, 1, 64)[0], 1.0).unwrap();
        let img = g.render(&g.expand_to_stack(&w)).unwrap();
        assert_eq!((img.height(), img.width()), (32, 32));
        assert!(img.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
