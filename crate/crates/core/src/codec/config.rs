use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::PATCH_SIZE;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub num_scales: usize,
    pub sample_ratio: usize,
    pub eca_layers_per_block: usize,
    /// Hidden feature width.
    pub channels: usize,
    pub k_neighbors: usize,
    /// Bottleneck width.
    pub latent_channels: usize,
    /// Width of the position-embedding self-attention.
    pub attn_dim: usize,
    /// Coded symbols outside `[-alphabet, alphabet]` are escaped.
    pub alphabet: i32,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            num_scales: 2,
            sample_ratio: 4,
            eca_layers_per_block: 2,
            channels: 256,
            k_neighbors: 16,
            latent_channels: 16,
            attn_dim: 256,
            alphabet: 127,
        }
    }
}

impl CodecConfig {
    /// Reduced widths for single-core training runs; the pyramid shape
    /// (scales, ratio, layers per block) stays at the defaults.
    pub fn desk() -> Self {
        Self {
            channels: 16,
            k_neighbors: 8,
            latent_channels: 8,
            attn_dim: 8,
            ..Self::default()
        }
    }

    /// Checks the config against the fixed patch size.
    pub fn validate(&self) -> Result<()> {
        self.validate_for(PATCH_SIZE)
    }

    /// Checks the config for patches of `n` points.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        let fields = [
            ("num_scales", self.num_scales),
            ("sample_ratio", self.sample_ratio),
            ("eca_layers_per_block", self.eca_layers_per_block),
            ("channels", self.channels),
            ("k_neighbors", self.k_neighbors),
            ("latent_channels", self.latent_channels),
            ("attn_dim", self.attn_dim),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !(1..=32767).contains(&self.alphabet) {
            return Err(Error::Config("alphabet must lie in 1..=32767".into()));
        }
        let factor = self
            .sample_ratio
            .checked_pow(self.num_scales as u32)
            .ok_or_else(|| Error::Config("sample_ratio^num_scales overflows".into()))?;
        if n % factor != 0 {
            return Err(Error::Config(format!(
                "{n} points are not divisible by sample_ratio^num_scales = {factor}"
            )));
        }
        // Attention runs on every level except the coarsest.
        let smallest = n / (factor / self.sample_ratio);
        if self.k_neighbors > smallest {
            return Err(Error::Config(format!(
                "k_neighbors {} exceeds the {smallest} points of the smallest attended level",
                self.k_neighbors
            )));
        }
        Ok(())
    }

    /// Points on each pyramid level for patches of `n` points.
    pub fn level_sizes(&self, n: usize) -> Vec<usize> {
        let mut sizes = vec![n];
        for _ in 0..self.num_scales {
            sizes.push(sizes.last().unwrap() / self.sample_ratio);
        }
        sizes
    }
}
