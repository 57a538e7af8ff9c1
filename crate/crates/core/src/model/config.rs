use serde::{Deserialize, Serialize};

use crate::error::ModelError;

use super::corpus::ALPHABET;

/// Dimensions of the toy model. Every quantized linear layer has an input
/// width divisible by 64, so both group sizes 16 and 64 apply everywhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyTransformerConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl Default for ToyTransformerConfig {
    fn default() -> Self {
        Self { vocab: 64, d_model: 64, n_layers: 2, n_heads: 4, d_ff: 128, max_seq_len: 512, seed: 0 }
    }
}

impl ToyTransformerConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::InvalidConfig(m));
        if self.vocab != ALPHABET.len() {
            return fail(format!("vocab must be {}, got {}", ALPHABET.len(), self.vocab));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.max_seq_len != 512 {
            return fail(format!("max_seq_len must be 512, got {}", self.max_seq_len));
        }
        if self.n_layers == 0 {
            return fail("n_layers must be at least 1".into());
        }
        for (what, v) in [("d_model", self.d_model), ("d_ff", self.d_ff)] {
            if v == 0 || v % 64 != 0 {
                return fail(format!("{what} {v} must be a positive multiple of 64"));
            }
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let embeddings = self.vocab * d + self.max_seq_len * d;
        let per_block = 2 * (2 * d) + 4 * d * d + 2 * d * self.d_ff;
        embeddings + self.n_layers * per_block + 2 * d + self.vocab * d
    }

    /// Parameters held by the quantizable linear layers.
    pub fn quantizable_param_count(&self) -> usize {
        self.n_layers * (4 * self.d_model * self.d_model + 2 * self.d_model * self.d_ff)
    }
}
