use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// How per-visit latents combine with selected global features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    LatentOnly,
    ConcatGlobal,
    GlobalOnly,
}

impl MergeMode {
    pub fn uses_encoder(self) -> bool {
        self != MergeMode::GlobalOnly
    }

    pub fn uses_globals(self) -> bool {
        self != MergeMode::LatentOnly
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    Zero,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseConfig {
    pub latent_dim: usize,
    pub conv_channels: usize,
    pub kernel: usize,
    pub hidden: usize,
    /// Reconstruction weight.
    pub k1: f64,
    /// KL weight.
    pub k2: f64,
    /// KL weight added to the classifier loss; 0 disables it.
    pub cls_kl_weight: f64,
    pub bias: BiasMode,
    pub lr: f64,
    pub pretrain_epochs: usize,
    pub epochs: usize,
    /// Patients per minibatch.
    pub batch_size: usize,
    pub seed: u64,
    /// Normalized frame length; a multiple of 4.
    pub frame_len: usize,
    pub merge_mode: MergeMode,
    /// Sample latents at inference instead of using μ.
    pub sample_at_inference: bool,
}

impl Default for PseConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            conv_channels: 64,
            kernel: 5,
            hidden: 64,
            k1: 1.0,
            k2: 1e-3,
            cls_kl_weight: 0.0,
            bias: BiasMode::Learned,
            lr: 1e-3,
            pretrain_epochs: 20,
            epochs: 100,
            batch_size: 16,
            seed: 0,
            frame_len: 512,
            merge_mode: MergeMode::LatentOnly,
            sample_at_inference: false,
        }
    }
}

impl PseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.conv_channels == 0 || self.hidden == 0 {
            return invalid("latent_dim, conv_channels and hidden must be positive");
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return invalid(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.frame_len < 4 || !self.frame_len.is_multiple_of(4) {
            return invalid(format!("frame_len must be a positive multiple of 4, got {}", self.frame_len));
        }
        if !(self.k1 >= 0.0 && self.k2 >= 0.0 && self.cls_kl_weight >= 0.0) {
            return invalid("loss weights must be non-negative");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return invalid("lr must be positive");
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be positive");
        }
        Ok(())
    }
}
