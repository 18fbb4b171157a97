use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decoder hyper-parameters. Field names follow the `config.json` that ships
/// next to published GPT-2 checkpoints so that file can be read directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(rename = "n_layer")]
    pub n_layers: usize,
    #[serde(rename = "n_head")]
    pub n_heads: usize,
    #[serde(rename = "n_embd")]
    pub d_model: usize,
    pub vocab_size: usize,
    #[serde(rename = "n_positions")]
    pub context_window: usize,
    #[serde(rename = "layer_norm_epsilon", default = "default_eps")]
    pub ln_eps: f64,
    #[serde(default = "default_eos")]
    pub eos_token_id: u32,
}

fn default_eps() -> f64 {
    1e-5
}

fn default_eos() -> u32 {
    50256
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::gpt2_small()
    }
}

impl ModelConfig {
    /// The 124M-parameter GPT-2 architecture.
    pub const fn gpt2_small() -> Self {
        Self {
            n_layers: 12,
            n_heads: 12,
            d_model: 768,
            vocab_size: 50257,
            context_window: 1024,
            ln_eps: 1e-5,
            eos_token_id: 50256,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 {
            return bad("layer, head and width counts must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} is not a multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.vocab_size == 0 || self.context_window == 0 {
            return bad("vocab_size and context_window must be positive".into());
        }
        if self.eos_token_id as usize >= self.vocab_size {
            return bad(format!(
                "eos_token_id {} outside vocabulary of {}",
                self.eos_token_id, self.vocab_size
            ));
        }
        Ok(())
    }

    /// Reads an HF-style `config.json`; unknown keys are ignored.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gpt2_small_is_consistent() {
        let c = ModelConfig::gpt2_small();
        c.validate().unwrap();
        assert_eq!(c.head_dim(), 64);
        assert_eq!(c.n_heads * c.head_dim(), c.d_model);
    }

    #[test]
    fn parses_published_config_keys() {
        let json = r#"{"activation_function":"gelu_new","n_ctx":1024,"n_embd":768,
            "n_head":12,"n_layer":12,"n_positions":1024,"vocab_size":50257,
            "layer_norm_epsilon":1e-05,"eos_token_id":50256}"#;
        let c: ModelConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c, ModelConfig::gpt2_small());
    }

    #[test]
    fn rejects_indivisible_heads() {
        let c = ModelConfig {
            d_model: 10,
            n_heads: 3,
            ..ModelConfig::gpt2_small()
        };
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
    }
}
