//! First-order optimiser shared by inversion and finetuning.

use std::f64::consts::PI;

/// Adaptive-moment update over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self::with_betas(len, 0.9, 0.999)
    }

    pub fn with_betas(len: usize, beta1: f64, beta2: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Returns the update to add to the parameters for gradient `grad`.
    pub fn delta(&mut self, grad: &[f64], lr: f64) -> Vec<f64> {
        assert_eq!(grad.len(), self.m.len(), "gradient length changed");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        grad.iter()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|(&g, (m, v))| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                -lr * (*m / c1) / ((*v / c2).sqrt() + self.eps)
            })
            .collect()
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        for (p, d) in params.iter_mut().zip(self.delta(grad, lr)) {
            *p += d;
        }
    }
}

/// Cosine decay from `base` at step 0 to 0 at `total`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let frac = step.min(total) as f64 / total as f64;
    base * 0.5 * (1.0 + (PI * frac).cos())
}
