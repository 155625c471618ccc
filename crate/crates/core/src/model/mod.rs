//! Latent world model: encoder, latent dynamics, filter, reward head, bilinear
//! critics for the contrastive objective, and an optional pixel decoder for the
//! reconstruction baseline.

mod checkpoint;
mod loss;
mod nets;

pub use checkpoint::{load_params, read_params, save_params, write_params};
pub use loss::{
    miro_loss, nce_from_scores, nce_term, nce_term_var, recon_loss, reward_penalty, Batch, LossBreakdown,
    LossWeights, SequenceView,
};
pub use nets::{LatentBelief, WorldModel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One valid-padding convolution of the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub action_dim: usize,
    /// Latent state width `n_s`.
    pub latent_dim: usize,
    /// Observation embedding width `n_z`.
    pub embed_dim: usize,
    /// Hidden width of the dynamics, filter and reward networks.
    pub hidden: usize,
    pub encoder: Vec<ConvSpec>,
    /// Open-loop horizons with one bilinear critic each.
    pub nce_horizons: Vec<usize>,
    /// Build the mirrored pixel decoder (reconstruction baseline).
    pub decoder: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let conv = |channels| ConvSpec {
            channels,
            kernel: 4,
            stride: 2,
        };
        Self {
            image_size: 32,
            action_dim: 1,
            latent_dim: 30,
            embed_dim: 30,
            hidden: 64,
            encoder: vec![conv(32), conv(64), conv(64)],
            nce_horizons: vec![1, 2, 3],
            decoder: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.embed_dim == 0 || self.hidden == 0 || self.action_dim == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if self.encoder.is_empty() {
            return Err(Error::Config("encoder needs at least one convolution".into()));
        }
        let mut hs = self.nce_horizons.clone();
        hs.sort_unstable();
        hs.dedup();
        if hs.len() != self.nce_horizons.len() || hs.first() == Some(&0) {
            return Err(Error::Config("nce_horizons must be distinct positive integers".into()));
        }
        self.spatial_sizes().map(|_| ())
    }

    pub fn max_horizon(&self) -> usize {
        self.nce_horizons.iter().copied().max().unwrap_or(0)
    }

    /// Side length after each encoder convolution, starting with the image size.
    pub fn spatial_sizes(&self) -> Result<Vec<usize>> {
        let mut sizes = vec![self.image_size];
        for (i, c) in self.encoder.iter().enumerate() {
            let h = *sizes.last().expect("non-empty");
            if c.kernel == 0 || c.stride == 0 || c.channels == 0 {
                return Err(Error::Config(format!("encoder layer {i} has a zero extent")));
            }
            if c.kernel > h {
                return Err(Error::Config(format!(
                    "encoder layer {i}: kernel {} exceeds feature map {h}",
                    c.kernel
                )));
            }
            sizes.push((h - c.kernel) / c.stride + 1);
        }
        Ok(sizes)
    }

    /// Flattened width of the last encoder feature map.
    pub fn feature_width(&self) -> Result<usize> {
        let sizes = self.spatial_sizes()?;
        let last = *sizes.last().expect("non-empty");
        Ok(self.encoder.last().expect("validated").channels * last * last)
    }
}
