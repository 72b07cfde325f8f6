use serde::{Deserialize, Serialize};

use super::ModelError;

/// Network shape and regularization for one model variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of the fixed input embeddings.
    pub embed_dim: usize,
    /// Width after the trainable projection.
    pub proj_dim: usize,
    /// Width of every hidden layer of F, G, H and the intra-attention net.
    pub hidden: usize,
    /// Affine+ReLU layers per network.
    pub layers: usize,
    pub classes: usize,
    pub dropout: f64,
    pub use_intra: bool,
    /// Offsets beyond this many positions share one distance bias.
    pub distance_cap: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::vanilla()
    }
}

impl ModelConfig {
    pub fn vanilla() -> Self {
        Self {
            embed_dim: 300,
            proj_dim: 200,
            hidden: 200,
            layers: 2,
            classes: 3,
            dropout: 0.2,
            use_intra: false,
            distance_cap: 10,
        }
    }

    pub fn intra() -> Self {
        Self {
            use_intra: true,
            ..Self::vanilla()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("proj_dim", self.proj_dim),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("classes", self.classes),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Width of the per-token representation fed to attend and compare.
    pub fn encoded_dim(&self) -> usize {
        if self.use_intra {
            2 * self.proj_dim
        } else {
            self.proj_dim
        }
    }

    pub fn distance_buckets(&self) -> usize {
        2 * self.distance_cap + 1
    }
}
