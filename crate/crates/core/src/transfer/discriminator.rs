//! A small convolutional critic for desk-scale adversarial finetuning.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::kernels::{
    self, avg_pool2x, avg_pool2x_backward, conv2d, conv2d_backward_input, conv2d_backward_weight,
};
use crate::tensor::Image;

const CHANNELS: [usize; 4] = [16, 32, 32, 32];

/// Four 3×3 conv + leaky-ReLU blocks, 2× average pooling after the first
/// three (while the side is even), global mean pooling and a linear logit.
#[derive(Debug, Clone)]
pub struct Discriminator {
    /// All parameters in one flat buffer; `layout` indexes into it.
    pub params: Vec<f64>,
    layout: Vec<Block>,
    head_w: usize,
    head_b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    c_in: usize,
    c_out: usize,
    weight: usize,
    bias: usize,
}

pub(crate) struct Trace {
    /// Input to each conv, with its spatial size.
    inputs: Vec<(Vec<f64>, usize, usize)>,
    pre: Vec<Vec<f64>>,
    pooled: Vec<bool>,
    pooled_features: Vec<f64>,
}

impl Discriminator {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut layout = Vec::new();
        let mut c_in = 3;
        for &c_out in &CHANNELS {
            let std = 1.0 / ((c_in * 9) as f64).sqrt();
            let weight = params.len();
            params.extend(
                (0..c_out * c_in * 9)
                    .map(|_| std * Distribution::<f64>::sample(&StandardNormal, &mut rng)),
            );
            let bias = params.len();
            params.extend(std::iter::repeat_n(0.0, c_out));
            layout.push(Block {
                c_in,
                c_out,
                weight,
                bias,
            });
            c_in = c_out;
        }
        let head_w = params.len();
        let std = 1.0 / (c_in as f64).sqrt();
        params.extend(
            (0..c_in).map(|_| std * Distribution::<f64>::sample(&StandardNormal, &mut rng)),
        );
        let head_b = params.len();
        params.push(0.0);
        Discriminator {
            params,
            layout,
            head_w,
            head_b,
        }
    }

    pub fn logit(&self, img: &Image) -> f64 {
        self.forward(img).0
    }

    pub(crate) fn forward(&self, img: &Image) -> (f64, Trace) {
        let (mut h, mut w) = (img.height(), img.width());
        let mut x = img.data().to_vec();
        let mut trace = Trace {
            inputs: Vec::new(),
            pre: Vec::new(),
            pooled: Vec::new(),
            pooled_features: Vec::new(),
        };
        for (k, b) in self.layout.iter().enumerate() {
            let weight = &self.params[b.weight..b.weight + b.c_out * b.c_in * 9];
            let mut pre = conv2d(&x, b.c_in, h, w, weight, b.c_out, 3);
            for (o, plane) in pre.chunks_mut(h * w).enumerate() {
                let bias = self.params[b.bias + o];
                plane.iter_mut().for_each(|v| *v += bias);
            }
            let act: Vec<f64> = pre.iter().map(|&v| kernels::lrelu(v)).collect();
            trace.inputs.push((x, h, w));
            trace.pre.push(pre);
            let pool = k + 1 < self.layout.len() && h % 2 == 0 && w % 2 == 0 && h >= 2 && w >= 2;
            trace.pooled.push(pool);
            x = if pool {
                let y = avg_pool2x(&act, b.c_out, h, w);
                h /= 2;
                w /= 2;
                y
            } else {
                act
            };
        }
        let c = self.layout.last().unwrap().c_out;
        let hw = (h * w) as f64;
        let feats: Vec<f64> = x
            .chunks(h * w)
            .map(|p| p.iter().sum::<f64>() / hw)
            .collect();
        debug_assert_eq!(feats.len(), c);
        let logit = feats
            .iter()
            .zip(&self.params[self.head_w..self.head_w + c])
            .map(|(f, w)| f * w)
            .sum::<f64>()
            + self.params[self.head_b];
        trace.pooled_features = feats;
        (logit, trace)
    }

    /// Gradients of `dlogit · logit` with respect to the parameters and the
    /// input image.
    pub(crate) fn backward(&self, trace: &Trace, dlogit: f64) -> (Vec<f64>, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let c = self.layout.last().unwrap().c_out;
        for (g, f) in grad[self.head_w..self.head_w + c]
            .iter_mut()
            .zip(&trace.pooled_features)
        {
            *g = dlogit * f;
        }
        grad[self.head_b] = dlogit;

        let n = self.layout.len();
        let (_, mut h, mut w) = trace.inputs[n - 1];
        if trace.pooled[n - 1] {
            h /= 2;
            w /= 2;
        }
        let hw = h * w;
        let mut g: Vec<f64> = self.params[self.head_w..self.head_w + c]
            .iter()
            .flat_map(|wc| std::iter::repeat_n(dlogit * wc / hw as f64, hw))
            .collect();
        for k in (0..n).rev() {
            let b = self.layout[k];
            let (input, h, w) = &trace.inputs[k];
            let (h, w) = (*h, *w);
            if trace.pooled[k] {
                g = avg_pool2x_backward(&g, b.c_out, h, w);
            }
            let gpre: Vec<f64> = g
                .iter()
                .zip(&trace.pre[k])
                .map(|(g, &p)| g * kernels::lrelu_grad(p))
                .collect();
            for (o, plane) in gpre.chunks(h * w).enumerate() {
                grad[b.bias + o] = plane.iter().sum();
            }
            let gw = conv2d_backward_weight(&gpre, input, b.c_in, h, w, b.c_out, 3);
            grad[b.weight..b.weight + gw.len()].copy_from_slice(&gw);
            let weight = &self.params[b.weight..b.weight + b.c_out * b.c_in * 9];
            g = conv2d_backward_input(&gpre, b.c_in, h, w, weight, b.c_out, 3);
        }
        (grad, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Image::new(
            8,
            8,
            (0..192).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let d = Discriminator::new(4);
        let (_, trace) = d.forward(&img);
        let (gp, gi) = d.backward(&trace, 1.0);
        let eps = 1e-5;
        for k in (0..d.params.len()).step_by(97) {
            let mut up = d.clone();
            up.params[k] += eps;
            let mut down = d.clone();
            down.params[k] -= eps;
            let fd = (up.logit(&img) - down.logit(&img)) / (2.0 * eps);
            assert!(
                (fd - gp[k]).abs() < 1e-6 * fd.abs().max(1.0),
                "param {k}: {fd} vs {}",
                gp[k]
            );
        }
        for k in (0..192).step_by(13) {
            let mut up = img.clone();
            up.data_mut()[k] += eps;
            let mut down = img.clone();
            down.data_mut()[k] -= eps;
            let fd = (d.logit(&up) - d.logit(&down)) / (2.0 * eps);
            assert!(
                (fd - gi[k]).abs() < 1e-6 * fd.abs().max(1.0),
                "pixel {k}: {fd} vs {}",
                gi[k]
            );
        }
    }
}
