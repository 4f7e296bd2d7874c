use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Architecture of one perception predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    /// Dimension of the embedding space the predictor reads.
    pub input_dim: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    /// Rounds the step embedding covers.
    pub max_steps: usize,
    /// Pairs per round.
    pub num_pairs: usize,
    /// Adds the state embedding `v_s` to each judgment token.
    pub use_state_embedding: bool,
    /// Adds the distance-bin embedding to each judgment token.
    pub use_distance_embedding: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            input_dim: 64,
            model_dim: 128,
            layers: 2,
            heads: 4,
            ff_dim: 256,
            dropout: 0.1,
            max_steps: 7,
            num_pairs: 5,
            use_state_embedding: true,
            use_distance_embedding: true,
        }
    }
}

impl PredictorConfig {
    pub fn max_sequence(&self) -> usize {
        1 + self.max_steps * self.num_pairs
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParam(msg.into()));
        if self.input_dim == 0 || self.model_dim == 0 || self.ff_dim == 0 {
            return bad("predictor dimensions must be positive");
        }
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return bad("model_dim must be divisible by heads");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.max_steps == 0 || self.num_pairs == 0 {
            return bad("max_steps and num_pairs must be positive");
        }
        Ok(())
    }
}
