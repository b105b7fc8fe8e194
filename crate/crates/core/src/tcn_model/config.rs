use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kernel_k: usize,
    pub layers_l: usize,
    pub hidden_channels: usize,
    pub mlp_hidden: usize,
    pub dropout_p: f64,
    pub dilation_base: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kernel_k: 8,
            layers_l: 12,
            hidden_channels: 8,
            mlp_hidden: 32,
            dropout_p: 0.0,
            dilation_base: 2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_k < 1 || self.layers_l < 1 || self.hidden_channels < 1 || self.mlp_hidden < 1 {
            return Err(Error::Config(
                "kernel_k, layers_l, hidden_channels and mlp_hidden must be >= 1".into(),
            ));
        }
        if self.dilation_base < 1 {
            return Err(Error::Config("dilation_base must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} not in [0, 1)", self.dropout_p)));
        }
        // dilations must fit comfortably in the slot arithmetic
        if self.layers_l > 40 {
            return Err(Error::Config("layers_l above 40 is not supported".into()));
        }
        Ok(())
    }

    /// Dilation of block `l` (0-based): `base^l`.
    pub fn dilation(&self, l: usize) -> usize {
        self.dilation_base.pow(l as u32)
    }

    /// Trailing input positions that can reach the last output:
    /// `1 + (K - 1) * Σ_l base^l`.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel_k - 1) * (0..self.layers_l).map(|l| self.dilation(l)).sum::<usize>()
    }

    /// Whether the checkpoint-relevant architecture matches; `seed` and
    /// `dropout_p` are training-time settings.
    pub fn same_architecture(&self, other: &ModelConfig) -> bool {
        self.kernel_k == other.kernel_k
            && self.layers_l == other.layers_l
            && self.hidden_channels == other.hidden_channels
            && self.mlp_hidden == other.mlp_hidden
            && self.dilation_base == other.dilation_base
    }
}
