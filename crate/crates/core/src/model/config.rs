use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and seed of a decoder-only transformer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub seed: u64,
    /// Reuse the token embedding as the unembedding matrix.
    #[serde(default)]
    pub tied_unembedding: bool,
    #[serde(default)]
    pub activation: Activation,
}

/// MLP nonlinearity. `Identity` exists for degenerate linear models used in
/// gradient checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    Identity,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 8,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            vocab_size: 512,
            max_seq_len: 256,
            seed: 0,
            tied_unembedding: false,
            activation: Activation::Gelu,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Every named parameter tensor together with its shape, in canonical order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, ff) = (self.d_model, self.d_ff);
        let mut shapes = vec![
            ("tok_embed".to_string(), vec![self.vocab_size, d]),
            ("pos_embed".to_string(), vec![self.max_seq_len, d]),
        ];
        for i in 0..self.n_layers {
            let p = format!("blocks.{i}");
            shapes.push((format!("{p}.ln1.gain"), vec![d]));
            shapes.push((format!("{p}.ln1.bias"), vec![d]));
            shapes.push((format!("{p}.attn.qkv"), vec![d, 3 * d]));
            shapes.push((format!("{p}.attn.out"), vec![d, d]));
            shapes.push((format!("{p}.ln2.gain"), vec![d]));
            shapes.push((format!("{p}.ln2.bias"), vec![d]));
            shapes.push((format!("{p}.mlp.up"), vec![d, ff]));
            shapes.push((format!("{p}.mlp.up_bias"), vec![ff]));
            shapes.push((format!("{p}.mlp.down"), vec![ff, d]));
            shapes.push((format!("{p}.mlp.down_bias"), vec![d]));
        }
        shapes.push(("final_norm.gain".to_string(), vec![d]));
        shapes.push(("final_norm.bias".to_string(), vec![d]));
        if !self.tied_unembedding {
            shapes.push(("unembed".to_string(), vec![d, self.vocab_size]));
        }
        shapes
    }

    pub fn n_params(&self) -> usize {
        self.tensor_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig {
            d_model: 10,
            n_heads: 4,
            ..ModelConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn rejects_zero_counts() {
        let cfg = ModelConfig {
            n_layers: 0,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn tied_config_drops_unembed() {
        let cfg = ModelConfig {
            tied_unembedding: true,
            ..ModelConfig::default()
        };
        assert!(cfg.tensor_shapes().iter().all(|(n, _)| n != "unembed"));
    }
}
