use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Shape and hyperparameters of the RoPE encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub ffn_dim: usize,
    pub rope_base: f64,
    pub vocab_size: usize,
    /// Dropout on the residual branches, active only during training.
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            d_model: 64,
            n_heads: 4,
            d_head: 16,
            ffn_dim: 256,
            rope_base: 10_000.0,
            vocab_size: 2_000,
            dropout: 0.0,
        }
    }
}

impl EncoderConfig {
    /// A config with `d_head = d_model / n_heads` and `ffn_dim = 4 * d_model`.
    pub fn small(layers: usize, d_model: usize, n_heads: usize, vocab_size: usize) -> Self {
        Self {
            layers,
            d_model,
            n_heads,
            d_head: d_model / n_heads.max(1),
            ffn_dim: 4 * d_model,
            vocab_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_head", self.d_head),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
        ] {
            if v < 1 {
                return Err(invalid(format!("{name} must be at least 1")));
            }
        }
        if self.d_head % 2 != 0 {
            return Err(invalid(format!("d_head {} must be even", self.d_head)));
        }
        if self.n_heads * self.d_head != self.d_model {
            return Err(invalid(format!(
                "d_model {} != n_heads {} * d_head {}",
                self.d_model, self.n_heads, self.d_head
            )));
        }
        if !(self.rope_base > 0.0 && self.rope_base.is_finite()) {
            return Err(invalid("rope_base must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        EncoderConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_shapes() {
        let bad = EncoderConfig { d_head: 15, d_model: 60, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = EncoderConfig { n_heads: 3, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = EncoderConfig { rope_base: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = EncoderConfig { layers: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
