use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub max_context: usize,
    pub vocab_total: usize,
    pub n_modalities: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
}

fn default_mlp_ratio() -> usize {
    4
}

impl ModelConfig {
    /// Desk-scale default: 2 layers, 4 heads, width 64, context 256.
    pub fn desk(vocab_total: usize, n_modalities: usize) -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            max_context: 256,
            vocab_total,
            n_modalities,
            mlp_ratio: 4,
        }
    }

    /// 8 layers, 8 heads of width 64.
    pub fn base(vocab_total: usize, n_modalities: usize) -> Self {
        Self {
            n_layers: 8,
            n_heads: 8,
            d_model: 512,
            max_context: 1024,
            vocab_total,
            n_modalities,
            mlp_ratio: 4,
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn d_ff(&self) -> usize {
        self.d_model * self.mlp_ratio
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::input(format!("invalid model config: {m}")));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.mlp_ratio == 0 {
            return bad("layers, heads, width and mlp ratio must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be a multiple of n_heads");
        }
        if self.vocab_total == 0 || self.max_context == 0 || self.n_modalities == 0 {
            return bad("vocabulary, context and modality count must be positive");
        }
        Ok(())
    }
}
