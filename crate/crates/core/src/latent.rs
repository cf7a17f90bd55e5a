//! Latent-space utilities: smoothing of latent sequences, a diagonal Gaussian
//! over style coefficients, and pose alignment of style stacks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::generator::{sample_latents, Generator, Param, StyleCoeffs, StyleStack, StyleVector};

/// Variance floor applied to every fitted dimension.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Below this the smoothing kernel is treated as a delta.
pub const MIN_KERNEL_SIGMA: f64 = 1e-3;

/// Diagonal Gaussian over style coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaGaussian {
    pub mean: StyleCoeffs,
    pub variance: StyleCoeffs,
    pub sample_count: usize,
}

const AUX_MEAN: &str = "sigma_gaussian.mean";
const AUX_VARIANCE: &str = "sigma_gaussian.variance";
const AUX_WIDTHS: &str = "sigma_gaussian.widths";
const AUX_COUNT: &str = "sigma_gaussian.sample_count";

impl SigmaGaussian {
    pub fn new(mean: StyleCoeffs, variance: StyleCoeffs, sample_count: usize) -> Result<Self> {
        if mean.widths() != variance.widths() {
            return Err(Error::Shape("mean and variance widths differ".into()));
        }
        if variance
            .per_layer
            .iter()
            .flatten()
            .any(|&v| !(v > 0.0 && v.is_finite()))
        {
            return Err(Error::Domain("variance must be positive and finite".into()));
        }
        Ok(SigmaGaussian {
            mean,
            variance,
            sample_count,
        })
    }

    pub fn widths(&self) -> Vec<usize> {
        self.mean.widths()
    }

    /// Auxiliary checkpoint arrays. Values are stored at `f32` precision.
    pub fn to_aux(&self) -> BTreeMap<String, Param> {
        let flat = |c: &StyleCoeffs| {
            let v: Vec<f32> = c.flatten().iter().map(|&x| x as f32).collect();
            Param {
                shape: vec![v.len()],
                data: v,
            }
        };
        let widths: Vec<f32> = self.widths().iter().map(|&w| w as f32).collect();
        BTreeMap::from([
            (AUX_MEAN.to_string(), flat(&self.mean)),
            (AUX_VARIANCE.to_string(), flat(&self.variance)),
            (
                AUX_WIDTHS.to_string(),
                Param {
                    shape: vec![widths.len()],
                    data: widths,
                },
            ),
            (
                AUX_COUNT.to_string(),
                Param {
                    shape: vec![1],
                    data: vec![self.sample_count as f32],
                },
            ),
        ])
    }

    /// Reads the arrays written by [`to_aux`](Self::to_aux); `None` if absent.
    pub fn from_aux(aux: &BTreeMap<String, Param>) -> Result<Option<Self>> {
        let (Some(mean), Some(var), Some(widths), Some(count)) = (
            aux.get(AUX_MEAN),
            aux.get(AUX_VARIANCE),
            aux.get(AUX_WIDTHS),
            aux.get(AUX_COUNT),
        ) else {
            return Ok(None);
        };
        let widths: Vec<usize> = widths.data.iter().map(|&w| w as usize).collect();
        let widen = |p: &Param| p.data.iter().map(|&v| v as f64).collect::<Vec<_>>();
        let mean = StyleCoeffs::from_flat(&widen(mean), &widths)?;
        let variance = StyleCoeffs::from_flat(&widen(var), &widths)?;
        let count = count.data.first().copied().unwrap_or(0.0) as usize;
        Self::new(mean, variance, count).map(Some)
    }
}

/// Fits a diagonal Gaussian over `σ = styles_to_coeffs(map_latent(z))` for
/// `n_samples` seeded draws of `z`.
pub fn fit_sigma_gaussian(gen: &Generator, n_samples: usize, seed: u64) -> Result<SigmaGaussian> {
    if n_samples < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 samples, got {n_samples}"
        )));
    }
    let zs = sample_latents(seed, n_samples, gen.config().latent_dim);
    let samples: Vec<Vec<f64>> = exec::map_indices(n_samples, |i| {
        let w = gen.map_latent(&zs[i], 1.0)?;
        Ok(gen.styles_to_coeffs(&gen.expand_to_stack(&w))?.flatten())
    })
    .into_iter()
    .collect::<Result<_>>()?;

    // Welford's update, one pass in draw order.
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    for (n, s) in samples.iter().enumerate() {
        let n = (n + 1) as f64;
        for ((m, q), &x) in mean.iter_mut().zip(&mut m2).zip(s) {
            let delta = x - *m;
            *m += delta / n;
            *q += delta * (x - *m);
        }
    }
    let denom = (n_samples - 1) as f64;
    let variance: Vec<f64> = m2.iter().map(|q| (q / denom).max(VARIANCE_FLOOR)).collect();
    let widths = gen.config().coeff_widths();
    SigmaGaussian::new(
        StyleCoeffs::from_flat(&mean, &widths)?,
        StyleCoeffs::from_flat(&variance, &widths)?,
        n_samples,
    )
}

fn check_widths(sigma: &StyleCoeffs, g: &SigmaGaussian) -> Result<()> {
    if sigma.widths() != g.widths() {
        return Err(Error::Shape(format!(
            "coefficients {:?} vs Gaussian {:?}",
            sigma.widths(),
            g.widths()
        )));
    }
    Ok(())
}

/// Mean over all coefficients of `(σ − μ)² / v`.
pub fn gaussian_prior_loss(sigma: &StyleCoeffs, g: &SigmaGaussian) -> Result<f64> {
    Ok(gaussian_prior_loss_grad(sigma, g)?.0)
}

/// The prior loss and its gradient with respect to `sigma`.
pub fn gaussian_prior_loss_grad(
    sigma: &StyleCoeffs,
    g: &SigmaGaussian,
) -> Result<(f64, StyleCoeffs)> {
    check_widths(sigma, g)?;
    let n = sigma.total_len() as f64;
    let mut loss = 0.0;
    let mut grad = sigma.zeros_like();
    for (l, gl) in grad.per_layer.iter_mut().enumerate() {
        let (s, m, v) = (
            &sigma.per_layer[l],
            &g.mean.per_layer[l],
            &g.variance.per_layer[l],
        );
        for i in 0..s.len() {
            let d = s[i] - m[i];
            loss += d * d / v[i];
            gl[i] = 2.0 * d / (v[i] * n);
        }
    }
    Ok((loss / n, grad))
}

/// Gaussian smoothing across a sequence of style vectors (radius `⌈3σ⌉`,
/// renormalised, reflected at both ends).
pub fn smooth_latents(seq: &[StyleVector], kernel_sigma: f64) -> Result<Vec<StyleVector>> {
    if !(kernel_sigma > 0.0) || !kernel_sigma.is_finite() {
        return Err(Error::Domain(format!(
            "kernel sigma {kernel_sigma} must be positive"
        )));
    }
    if seq.is_empty() {
        return Err(Error::Domain("cannot smooth an empty sequence".into()));
    }
    let dim = seq[0].len();
    if seq.iter().any(|s| s.len() != dim) {
        return Err(Error::Shape("style vectors differ in width".into()));
    }
    let n = seq.len();
    if kernel_sigma < MIN_KERNEL_SIGMA || n == 1 {
        return Ok(seq.to_vec());
    }
    let radius = (3.0 * kernel_sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * kernel_sigma * kernel_sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let period = 2 * (n as isize - 1);
    let reflect = |i: isize| {
        let m = i.rem_euclid(period);
        (if m < n as isize { m } else { period - m }) as usize
    };
    (0..n)
        .map(|j| {
            let base = seq[j].values();
            let mut out = base.to_vec();
            for (k, wk) in (-radius..=radius).zip(&weights) {
                let src = seq[reflect(j as isize + k)].values();
                let c = wk / total;
                for ((o, &s), &b) in out.iter_mut().zip(src).zip(base) {
                    *o += c * (s - b);
                }
            }
            StyleVector::new(out)
        })
        .collect()
}

/// Takes the first `k_dims` flattened values from `reference` and the rest
/// from `src`.
pub fn pose_align(src: &StyleStack, reference: &StyleStack, k_dims: usize) -> Result<StyleStack> {
    if src.num_rows() != reference.num_rows() || src.row_width() != reference.row_width() {
        return Err(Error::Shape(format!(
            "stacks are {}×{} and {}×{}",
            src.num_rows(),
            src.row_width(),
            reference.num_rows(),
            reference.row_width()
        )));
    }
    let mut flat = src.flatten();
    if k_dims > flat.len() {
        return Err(Error::Range(format!(
            "k_dims {k_dims} exceeds the {} stack dimensions",
            flat.len()
        )));
    }
    flat[..k_dims].copy_from_slice(&reference.flatten()[..k_dims]);
    StyleStack::from_flat(&flat, src.num_rows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::GeneratorConfig;

    fn seq(rows: &[&[f64]]) -> Vec<StyleVector> {
        rows.iter()
            .map(|r| StyleVector::new(r.to_vec()).unwrap())
            .collect()
    }

    #[test]
    fn constant_sequence_is_fixed() {
        let row: &[f64] = &[1.5, -2.0];
        let s = seq(&[row; 5]);
        assert_eq!(smooth_latents(&s, 1.7).unwrap(), s);
    }

    #[test]
    fn tiny_sigma_is_identity_and_bad_sigma_errors() {
        let s = seq(&[&[1.0], &[5.0], &[-3.0]]);
        assert_eq!(smooth_latents(&s, 5e-4).unwrap(), s);
        assert!(smooth_latents(&s, 0.0).is_err());
        assert!(smooth_latents(&s, -1.0).is_err());
    }

    #[test]
    fn prior_at_mean_and_one_sd() {
        let g = SigmaGaussian::new(
            StyleCoeffs::new(vec![vec![1.0, 2.0], vec![-1.0]]),
            StyleCoeffs::new(vec![vec![4.0, 0.25], vec![9.0]]),
            10,
        )
        .unwrap();
        assert_eq!(gaussian_prior_loss(&g.mean, &g).unwrap(), 0.0);
        let s = StyleCoeffs::new(vec![vec![3.0, 2.5], vec![2.0]]);
        assert!((gaussian_prior_loss(&s, &g).unwrap() - 1.0).abs() < 1e-15);
        let bad = StyleCoeffs::new(vec![vec![0.0; 3]]);
        assert!(matches!(
            gaussian_prior_loss(&bad, &g),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn pose_align_rows() {
        let d = 3;
        let a = StyleStack::new(seq(&[&[1.0; 3][..], &[2.0; 3], &[3.0; 3]])).unwrap();
        let b = StyleStack::new(seq(&[&[7.0; 3][..], &[8.0; 3], &[9.0; 3]])).unwrap();
        assert_eq!(pose_align(&a, &b, 0).unwrap(), a);
        assert_eq!(pose_align(&a, &b, 3 * d).unwrap(), b);
        let m = pose_align(&a, &b, 2 * d).unwrap();
        assert_eq!(m.row(0), b.row(0));
        assert_eq!(m.row(1), b.row(1));
        assert_eq!(m.row(2), a.row(2));
        assert!(pose_align(&a, &b, 3 * d + 1).is_err());
    }

    #[test]
    fn aux_round_trip() {
        let gen = Generator::new(GeneratorConfig::tiny(1)).unwrap();
        let g = fit_sigma_gaussian(&gen, 16, 4).unwrap();
        let back = SigmaGaussian::from_aux(&g.to_aux()).unwrap().unwrap();
        assert_eq!(back.widths(), g.widths());
        assert_eq!(back.sample_count, 16);
        for (a, b) in back.mean.flatten().iter().zip(g.mean.flatten()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
        assert!(SigmaGaussian::from_aux(&BTreeMap::new()).unwrap().is_none());
    }
}
