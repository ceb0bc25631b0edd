//! The representation model: log-mel frontend, convolutional encoder,
//! learned instrument queries with heavy dropout, the query-conditioned
//! extractor, and an optional projection head used only inside the
//! contrastive losses.

mod checkpoint;
mod encoder;
mod frontend;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use encoder::{
    encode, encode_batch, extract, project, query_vector, QueryMode, QuerySource,
};
pub use frontend::{logmel, logmel_tape, Features, MelFrontend};
pub use params::{bind_params, init_params, param_specs, ParamBindings, ParamStore};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub sample_rate: u32,
    pub segment_secs: f64,
    /// STFT window (samples).
    pub window: usize,
    pub hop: usize,
    pub mel_bins: usize,
    /// dB clip range applied before scaling to [-1, 1].
    pub db_clip: (f64, f64),
    /// Channel widths of the stride-2 conv blocks.
    pub conv_widths: Vec<usize>,
    /// Embedding dimension D.
    pub embed_dim: usize,
    /// Query dimension D_q.
    pub query_dim: usize,
    pub extractor_hidden: usize,
    pub leaky_slope: f64,
    /// Projection head output dimension, used only inside the losses.
    pub proj_dim: usize,
    pub use_projection_head: bool,
    /// Query dropout rate range during training.
    pub query_dropout: (f64, f64),
    /// Instrument classes in query-table order.
    pub classes: Vec<String>,
}

impl ModelConfig {
    /// Desk-scale defaults: small enough to train on one CPU core.
    pub fn desk(classes: Vec<String>) -> ModelConfig {
        ModelConfig {
            sample_rate: 16_000,
            segment_secs: 1.0,
            window: 512,
            hop: 128,
            mel_bins: 64,
            db_clip: (-80.0, 40.0),
            conv_widths: vec![8, 16, 32, 64],
            embed_dim: 64,
            query_dim: 64,
            extractor_hidden: 128,
            leaky_slope: 0.1,
            proj_dim: 32,
            use_projection_head: true,
            query_dropout: (0.75, 0.95),
            classes,
        }
    }

    /// Full-scale frontend values; training at this size needs real
    /// accelerators and is provided as a config preset only.
    pub fn paper(classes: Vec<String>) -> ModelConfig {
        ModelConfig {
            sample_rate: 44_100,
            segment_secs: 10.0,
            window: 2048,
            hop: 512,
            mel_bins: 64,
            db_clip: (-80.0, 40.0),
            conv_widths: vec![16, 32, 64, 128],
            embed_dim: 64,
            query_dim: 64,
            extractor_hidden: 128,
            leaky_slope: 0.1,
            proj_dim: 32,
            use_projection_head: true,
            query_dropout: (0.75, 0.95),
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window <= self.hop {
            return Err(Error::InvalidConfig(format!(
                "window ({}) must exceed hop ({})",
                self.window, self.hop
            )));
        }
        if self.db_clip.0 >= self.db_clip.1 {
            return Err(Error::InvalidConfig("db_clip min must be below max".into()));
        }
        if self.conv_widths.is_empty() {
            return Err(Error::InvalidConfig("conv_widths must be nonempty".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::InvalidConfig("model needs instrument classes".into()));
        }
        Ok(())
    }

    pub fn segment_samples(&self) -> usize {
        (self.segment_secs * self.sample_rate as f64).round() as usize
    }

    pub fn frames(&self) -> usize {
        1 + (self.segment_samples() - self.window) / self.hop
    }

    pub fn class_index(&self, class: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| Error::UnknownClass(class.to_string()))
    }
}
