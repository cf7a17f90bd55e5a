use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and seed of a generator.
///
/// Layer `i` reads `channels_per_layer[i - 1]` channels (the learned constant
/// has `channels_per_layer[0]`), optionally upsamples 2× when `i` is listed in
/// `upsample_layers`, and writes `channels_per_layer[i]` channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    pub num_layers: usize,
    pub base_resolution: usize,
    pub channels_per_layer: Vec<usize>,
    pub upsample_layers: Vec<usize>,
    pub mapping_layers: usize,
    pub rng_seed: u64,
}

impl GeneratorConfig {
    /// 4×4 → 32×32 with two layers per resolution, latent width 64.
    pub fn desk(rng_seed: u64) -> Self {
        GeneratorConfig {
            latent_dim: 64,
            num_layers: 8,
            base_resolution: 4,
            channels_per_layer: vec![64, 64, 64, 64, 32, 32, 16, 16],
            upsample_layers: vec![2, 4, 6],
            mapping_layers: 4,
            rng_seed,
        }
    }

    /// 4×4 → 256×256, 14 layers, latent width 512.
    pub fn full(rng_seed: u64) -> Self {
        GeneratorConfig {
            latent_dim: 512,
            num_layers: 14,
            base_resolution: 4,
            channels_per_layer: vec![
                512, 512, 512, 512, 512, 512, 512, 512, 512, 512, 256, 256, 128, 128,
            ],
            upsample_layers: vec![2, 4, 6, 8, 10, 12],
            mapping_layers: 8,
            rng_seed,
        }
    }

    /// A very small architecture for gradient checks: 4×4 → 8×8.
    pub fn tiny(rng_seed: u64) -> Self {
        GeneratorConfig {
            latent_dim: 8,
            num_layers: 3,
            base_resolution: 4,
            channels_per_layer: vec![6, 5, 4],
            upsample_layers: vec![2],
            mapping_layers: 2,
            rng_seed,
        }
    }

    /// Equal up to the initialisation seed.
    pub fn same_architecture(&self, other: &GeneratorConfig) -> bool {
        GeneratorConfig {
            rng_seed: other.rng_seed,
            ..self.clone()
        } == *other
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.latent_dim == 0 || self.num_layers == 0 || self.mapping_layers == 0 {
            return bad("latent_dim, num_layers and mapping_layers must be positive".into());
        }
        if self.base_resolution == 0 || !self.base_resolution.is_power_of_two() {
            return bad(format!(
                "base_resolution {} is not a power of two",
                self.base_resolution
            ));
        }
        if self.channels_per_layer.len() != self.num_layers {
            return bad(format!(
                "{} channel entries for {} layers",
                self.channels_per_layer.len(),
                self.num_layers
            ));
        }
        if self.channels_per_layer.contains(&0) {
            return bad("every layer needs at least one channel".into());
        }
        if self.upsample_layers.windows(2).any(|p| p[0] >= p[1])
            || self.upsample_layers.iter().any(|&i| i >= self.num_layers)
        {
            return bad(format!(
                "upsample_layers {:?} must be strictly increasing layer indices",
                self.upsample_layers
            ));
        }
        Ok(())
    }

    pub fn upsamples_at(&self, layer: usize) -> bool {
        self.upsample_layers.binary_search(&layer).is_ok()
    }

    pub fn in_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            self.channels_per_layer[0]
        } else {
            self.channels_per_layer[layer - 1]
        }
    }

    pub fn out_channels(&self, layer: usize) -> usize {
        self.channels_per_layer[layer]
    }

    /// Side length of `f_layer` under the native layout.
    pub fn layer_resolution(&self, layer: usize) -> usize {
        let ups = self.upsample_layers.iter().filter(|&&u| u <= layer).count();
        self.base_resolution << ups
    }

    pub fn output_resolution(&self) -> usize {
        self.layer_resolution(self.num_layers - 1)
    }

    /// Width of `σ_layer`: the conv modulation, plus the RGB modulation on
    /// the last layer.
    pub fn coeff_width(&self, layer: usize) -> usize {
        let w = self.in_channels(layer);
        if layer + 1 == self.num_layers {
            w + self.channels_per_layer[layer]
        } else {
            w
        }
    }

    pub fn coeff_widths(&self) -> Vec<usize> {
        (0..self.num_layers).map(|i| self.coeff_width(i)).collect()
    }

    /// Default attribute-transfer blending cut: the last of the first 12 of
    /// 14 layers, scaled to this depth and clamped to the last layer.
    pub fn default_layer_cut(&self) -> usize {
        ((12 * self.num_layers).div_ceil(14)).min(self.num_layers - 1)
    }

    /// Default pose-alignment width: the first four style rows.
    pub fn default_pose_dims(&self) -> usize {
        4.min(self.num_layers) * self.latent_dim
    }
}
