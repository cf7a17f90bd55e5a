//! Reverse-mode gradients of the plain (hook-free) synthesis path.

use std::collections::BTreeMap;

use super::{Generator, StyleCoeffs, StyleStack};
use crate::error::Result;
use crate::kernels::{self, Modulated};
use crate::tensor::{Image, Tensor};

/// Activations retained from a forward pass for [`Generator::backward`].
#[derive(Debug, Clone)]
pub struct SynthesisTrace {
    pub coeffs: StyleCoeffs,
    pub image: Image,
    conv_inputs: Vec<Tensor>,
    pre_activations: Vec<Tensor>,
    modulated: Vec<Modulated>,
    features: Tensor,
    rgb_modulated: Modulated,
}

/// Gradients of a scalar loss.
#[derive(Debug, Clone)]
pub struct SynthesisGrads {
    /// With respect to the style coefficients.
    pub coeffs: StyleCoeffs,
    /// With respect to named parameters; empty unless requested.
    pub params: BTreeMap<String, Vec<f64>>,
}

/// Intermediate values of the mapping network for one latent.
#[derive(Debug, Clone)]
pub struct MappingTrace {
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Generator {
    pub fn synthesize_traced(&self, coeffs: &StyleCoeffs) -> Result<SynthesisTrace> {
        self.check_coeffs(coeffs)?;
        let n = self.config.num_layers;
        let mut conv_inputs = Vec::with_capacity(n);
        let mut pre_activations = Vec::with_capacity(n);
        let mut modulated = Vec::with_capacity(n);
        let mut x = self.constant_input();
        for i in 0..n {
            let (out, conv_in, pre, m) = self.layer_pass(i, &x, coeffs)?;
            conv_inputs.push(conv_in);
            pre_activations.push(pre);
            modulated.push(m);
            x = out;
        }
        let (rgb, rgb_modulated) = self.rgb_pass(&x, coeffs)?;
        Ok(SynthesisTrace {
            coeffs: coeffs.clone(),
            image: Self::finish_image(&rgb)?,
            conv_inputs,
            pre_activations,
            modulated,
            features: x,
            rgb_modulated,
        })
    }

    /// Back-propagates `grad_image` (d loss / d image, `3×H×W`) through the
    /// synthesis network. Parameter gradients are only filled in when
    /// `with_params` is set.
    pub fn backward(
        &self,
        trace: &SynthesisTrace,
        grad_image: &[f64],
        with_params: bool,
    ) -> SynthesisGrads {
        let cfg = &self.config;
        let n = cfg.num_layers;
        let last = n - 1;
        let coeffs = &trace.coeffs;
        let mut params = BTreeMap::new();
        let mut grad_coeffs = coeffs.zeros_like();

        let grad_rgb: Vec<f64> = grad_image
            .iter()
            .zip(trace.image.data())
            .map(|(g, y)| g * (1.0 - y * y))
            .collect();
        let [_, c, h, w] = trace.features.shape();
        let hw = h * w;
        let grad_eff =
            kernels::conv2d_backward_weight(&grad_rgb, trace.features.data(), c, h, w, 3, 1);
        let mut grad_x =
            kernels::conv2d_backward_input(&grad_rgb, c, h, w, &trace.rgb_modulated.weight, 3, 1);
        let (gw, gs) = kernels::modulate_backward(
            &self.rgb.weight.data,
            self.rgb_style(coeffs),
            3,
            c,
            1,
            &trace.rgb_modulated,
            &grad_eff,
        );
        let cin_last = cfg.in_channels(last);
        grad_coeffs.per_layer[last][cin_last..].copy_from_slice(&gs);
        if with_params {
            params.insert("synthesis.torgb.weight".into(), gw);
            params.insert(
                "synthesis.torgb.bias".into(),
                (0..3)
                    .map(|o| grad_rgb[o * hw..(o + 1) * hw].iter().sum())
                    .collect(),
            );
        }

        for i in (0..n).rev() {
            let (cin, cout) = (cfg.in_channels(i), cfg.out_channels(i));
            let pre = &trace.pre_activations[i];
            let [_, _, h, w] = pre.shape();
            let hw = h * w;
            let grad_pre: Vec<f64> = grad_x
                .iter()
                .zip(pre.data())
                .map(|(g, &p)| g * kernels::lrelu_grad(p))
                .collect();
            let conv_in = &trace.conv_inputs[i];
            let m = &trace.modulated[i];
            let grad_eff =
                kernels::conv2d_backward_weight(&grad_pre, conv_in.data(), cin, h, w, cout, 3);
            let grad_in = kernels::conv2d_backward_input(&grad_pre, cin, h, w, &m.weight, cout, 3);
            let (gw, gs) = kernels::modulate_backward(
                &self.layers[i].weight.data,
                self.conv_style(i, coeffs),
                cout,
                cin,
                3,
                m,
                &grad_eff,
            );
            grad_coeffs.per_layer[i][..cin].copy_from_slice(&gs);
            if with_params {
                let noise = kernels::noise_plane(cfg.rng_seed, i, h, w);
                let mut gbias = vec![0.0; cout];
                let mut gnoise = 0.0;
                for o in 0..cout {
                    for (g, nz) in grad_pre[o * hw..(o + 1) * hw].iter().zip(&noise) {
                        gbias[o] += g;
                        gnoise += g * nz;
                    }
                }
                params.insert(format!("synthesis.layer{i}.conv.weight"), gw);
                params.insert(format!("synthesis.layer{i}.conv.bias"), gbias);
                params.insert(
                    format!("synthesis.layer{i}.conv.noise_strength"),
                    vec![gnoise],
                );
            }
            grad_x = if cfg.upsamples_at(i) {
                kernels::upsample2x_backward(&grad_in, cin, h / 2, w / 2)
            } else {
                grad_in
            };
        }
        if with_params {
            params.insert("synthesis.const".into(), grad_x);
        }
        SynthesisGrads {
            coeffs: grad_coeffs,
            params,
        }
    }

    /// Gradients through the affine layers: returns per-row gradients of the
    /// style stack and the affine parameter gradients.
    pub fn coeffs_backward(
        &self,
        stack: &StyleStack,
        grad_coeffs: &StyleCoeffs,
    ) -> (Vec<Vec<f64>>, BTreeMap<String, Vec<f64>>) {
        let last = self.config.num_layers - 1;
        let mut params = BTreeMap::new();
        let rows = (0..self.config.num_layers)
            .map(|i| {
                let x = stack.row(i).values();
                let cin = self.config.in_channels(i);
                let g = &grad_coeffs.per_layer[i];
                let (dw, db, mut dx) = self.layers[i].affine.backward(x, &g[..cin]);
                params.insert(format!("synthesis.layer{i}.affine.weight"), dw);
                params.insert(format!("synthesis.layer{i}.affine.bias"), db);
                if i == last {
                    let (dw, db, dx2) = self.rgb.affine.backward(x, &g[cin..]);
                    params.insert("synthesis.torgb.affine.weight".into(), dw);
                    params.insert("synthesis.torgb.affine.bias".into(), db);
                    for (a, b) in dx.iter_mut().zip(dx2) {
                        *a += b;
                    }
                }
                dx
            })
            .collect();
        (rows, params)
    }

    pub fn mapping_traced(&self, z: &[f64]) -> MappingTrace {
        let ms = (z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64 + 1e-8).sqrt();
        let mut x: Vec<f64> = z.iter().map(|v| v / ms).collect();
        let mut inputs = Vec::new();
        let mut pre_activations = Vec::new();
        for layer in &self.mapping {
            let pre = layer.forward(&x);
            inputs.push(x);
            x = pre.iter().map(|&v| kernels::lrelu(v)).collect();
            pre_activations.push(pre);
        }
        MappingTrace {
            inputs,
            pre_activations,
            output: x,
        }
    }

    /// Mapping-network parameter gradients for an untruncated `w`.
    pub fn mapping_backward(
        &self,
        trace: &MappingTrace,
        grad_w: &[f64],
    ) -> BTreeMap<String, Vec<f64>> {
        let mut params = BTreeMap::new();
        let mut g = grad_w.to_vec();
        for (j, layer) in self.mapping.iter().enumerate().rev() {
            let gp: Vec<f64> = g
                .iter()
                .zip(&trace.pre_activations[j])
                .map(|(g, &p)| g * kernels::lrelu_grad(p))
                .collect();
            let (dw, db, dx) = layer.backward(&trace.inputs[j], &gp);
            params.insert(format!("mapping.fc{j}.weight"), dw);
            params.insert(format!("mapping.fc{j}.bias"), db);
            g = dx;
        }
        params
    }
}

#[cfg(test)]
mod tests {
    use super::super::{sample_latents, GeneratorConfig};
    use super::*;

    /// Loss `Σ image ⊙ probe`, differentiated numerically for the oracle.
    fn probe_loss(g: &Generator, c: &StyleCoeffs, probe: &[f64]) -> f64 {
        let img = g.render(c).unwrap();
        img.data().iter().zip(probe).map(|(a, b)| a * b).sum()
    }

    fn setup() -> (Generator, StyleCoeffs, Vec<f64>) {
        let g = Generator::new(GeneratorConfig::tiny(5)).unwrap();
        let w = g.map_latent(&sample_latents(2, 1, 8)[0], 1.0).unwrap();
        let c = g.styles_to_coeffs(&g.expand_to_stack(&w)).unwrap();
        let n = 3 * 8 * 8;
        let probe: Vec<f64> = (0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
        (g, c, probe)
    }

    #[test]
    fn coeff_gradient_matches_central_differences() {
        let (g, c, probe) = setup();
        let trace = g.synthesize_traced(&c).unwrap();
        let grads = g.backward(&trace, &probe, false);
        let flat = c.flatten();
        let analytic = grads.coeffs.flatten();
        let eps = 1e-5;
        let widths = c.widths();
        for k in (0..flat.len()).step_by(3) {
            let mut p = flat.clone();
            p[k] += eps;
            let mut m = flat.clone();
            m[k] -= eps;
            let fd = (probe_loss(&g, &StyleCoeffs::from_flat(&p, &widths).unwrap(), &probe)
                - probe_loss(&g, &StyleCoeffs::from_flat(&m, &widths).unwrap(), &probe))
                / (2.0 * eps);
            assert!(
                (fd - analytic[k]).abs() <= 1e-5 * (1.0 + fd.abs()),
                "coeff {k}: {fd} vs {}",
                analytic[k]
            );
        }
    }

    #[test]
    fn param_gradient_matches_central_differences() {
        let (g, c, probe) = setup();
        let trace = g.synthesize_traced(&c).unwrap();
        let grads = g.backward(&trace, &probe, true);
        let eps = 1e-3;
        for name in [
            "synthesis.const",
            "synthesis.layer0.conv.weight",
            "synthesis.layer1.conv.bias",
            "synthesis.layer2.conv.noise_strength",
            "synthesis.torgb.weight",
            "synthesis.torgb.bias",
        ] {
            let analytic = &grads.params[name];
            let base = g.param(name).unwrap().clone();
            for k in (0..base.len()).step_by(7) {
                let mut gp = g.clone();
                let mut gm = g.clone();
                // perturb in f32 storage; measure the step actually taken
                let v = base.data[k];
                let (up, down) = (v + eps as f32, v - eps as f32);
                gp.param_mut(name).unwrap().data[k] = up;
                gm.param_mut(name).unwrap().data[k] = down;
                let fd = (probe_loss(&gp, &c, &probe) - probe_loss(&gm, &c, &probe))
                    / (up as f64 - down as f64);
                assert!(
                    (fd - analytic[k]).abs() <= 2e-3 * (1.0 + fd.abs()),
                    "{name}[{k}]: {fd} vs {}",
                    analytic[k]
                );
            }
        }
    }

    #[test]
    fn affine_and_mapping_gradients_chain() {
        let (g, _, probe) = setup();
        let z = sample_latents(9, 1, 8).remove(0);
        let loss = |gen: &Generator| {
            let w = gen.map_latent(&z, 1.0).unwrap();
            let c = gen.styles_to_coeffs(&gen.expand_to_stack(&w)).unwrap();
            probe_loss(gen, &c, &probe)
        };
        let mt = g.mapping_traced(z.values());
        let w = g.map_latent(&z, 1.0).unwrap();
        let stack = g.expand_to_stack(&w);
        let c = g.styles_to_coeffs(&stack).unwrap();
        let trace = g.synthesize_traced(&c).unwrap();
        let grads = g.backward(&trace, &probe, false);
        let (rows, mut params) = g.coeffs_backward(&stack, &grads.coeffs);
        let mut gw = vec![0.0; 8];
        for r in &rows {
            for (a, b) in gw.iter_mut().zip(r) {
                *a += b;
            }
        }
        params.extend(g.mapping_backward(&mt, &gw));
        for name in [
            "mapping.fc0.weight",
            "mapping.fc1.bias",
            "synthesis.layer1.affine.weight",
            "synthesis.torgb.affine.bias",
        ] {
            let analytic = &params[name];
            for k in (0..analytic.len()).step_by(5) {
                let mut gp = g.clone();
                let mut gm = g.clone();
                let v = g.param(name).unwrap().data[k];
                let (up, down) = (v + 2.5e-4, v - 2.5e-4); // small step: mapping lrelu kinks sit near some units
                gp.param_mut(name).unwrap().data[k] = up;
                gm.param_mut(name).unwrap().data[k] = down;
                let fd = (loss(&gp) - loss(&gm)) / (up as f64 - down as f64);
                assert!(
                    (fd - analytic[k]).abs() <= 2e-3 * (1.0 + fd.abs()),
                    "{name}[{k}]: {fd} vs {}",
                    analytic[k]
                );
            }
        }
    }
}
