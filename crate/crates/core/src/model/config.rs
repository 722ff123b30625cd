use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::window_out;

/// Denominator used inside the attention softmax.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScale {
    /// `sqrt(d2)`, the full embedding width.
    Model,
    /// `sqrt(d2 / heads)`, the per-head width.
    Head,
}

/// Architecture of the network. Defaults reproduce the published
/// configuration on the four-class motor imagery geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// EEG electrodes.
    pub channels: usize,
    /// Samples per trial.
    pub samples: usize,
    /// Wavelet analysis frequencies.
    pub freqs: usize,
    /// Branch feature width (40).
    pub d1: usize,
    /// Embedding width fed to the encoder (120).
    pub d2: usize,
    /// Branch I time-convolution kernel (30).
    pub tc1: usize,
    /// Branch II time-convolution kernel (125).
    pub tc2: usize,
    /// Branch I pooling window (120) and stride (window / 10).
    pub pool1: usize,
    pub pool1_stride: usize,
    /// Branch II pooling window (64) and stride (window / 2).
    pub pool2: usize,
    pub pool2_stride: usize,
    /// Encoder blocks (4).
    pub encoder_layers: usize,
    /// Attention heads (10).
    pub heads: usize,
    /// Expansion factor of the encoder MLP (2).
    pub encoder_mlp_ratio: usize,
    /// Hidden width of the classifier MLP (64).
    pub mlp_hidden: usize,
    pub n_classes: usize,
    pub attention_scale: AttentionScale,
    /// Dropout after attention and encoder MLP outputs; 0 disables.
    pub dropout: f64,
    pub use_branch1: bool,
    pub use_branch2_in1: bool,
    pub use_branch2_in2: bool,
    pub use_transformer: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 22,
            samples: 1000,
            freqs: 40,
            d1: 40,
            d2: 120,
            tc1: 30,
            tc2: 125,
            pool1: 120,
            pool1_stride: 12,
            pool2: 64,
            pool2_stride: 32,
            encoder_layers: 4,
            heads: 10,
            encoder_mlp_ratio: 2,
            mlp_hidden: 64,
            n_classes: 4,
            attention_scale: AttentionScale::Model,
            dropout: 0.0,
            use_branch1: true,
            use_branch2_in1: true,
            use_branch2_in2: true,
            use_transformer: true,
        }
    }
}

impl ModelConfig {
    /// Sequence length contributed by Branch I.
    pub fn branch1_len(&self) -> Option<usize> {
        let t1 = window_out(self.samples, self.tc1, 1)?;
        window_out(t1, self.pool1, self.pool1_stride)
    }

    /// Sequence length contributed by each Branch II view.
    pub fn branch2_len(&self) -> Option<usize> {
        let t1 = window_out(self.samples, self.tc2, 1)?;
        window_out(t1, self.pool2, self.pool2_stride)
    }

    /// Length of the fused sequence over the enabled branches.
    pub fn seq_len(&self) -> Option<usize> {
        let mut total = 0;
        if self.use_branch1 {
            total += self.branch1_len()?;
        }
        let views = usize::from(self.use_branch2_in1) + usize::from(self.use_branch2_in2);
        if views > 0 {
            total += views * self.branch2_len()?;
        }
        Some(total)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("samples", self.samples),
            ("freqs", self.freqs),
            ("d1", self.d1),
            ("d2", self.d2),
            ("tc1", self.tc1),
            ("tc2", self.tc2),
            ("pool1", self.pool1),
            ("pool1_stride", self.pool1_stride),
            ("pool2", self.pool2),
            ("pool2_stride", self.pool2_stride),
            ("heads", self.heads),
            ("encoder_mlp_ratio", self.encoder_mlp_ratio),
            ("mlp_hidden", self.mlp_hidden),
            ("n_classes", self.n_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.use_branch1 || self.use_branch2_in1 || self.use_branch2_in2) {
            return Err(Error::Config("at least one branch input must be enabled".into()));
        }
        if !self.d2.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("d2={} is not divisible by heads={}", self.d2, self.heads)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.use_branch1 && self.branch1_len().is_none() {
            return Err(Error::Config(format!(
                "samples={} too short for branch I (kernel {}, pool {})",
                self.samples, self.tc1, self.pool1
            )));
        }
        if (self.use_branch2_in1 || self.use_branch2_in2) && self.branch2_len().is_none() {
            return Err(Error::Config(format!(
                "samples={} too short for branch II (kernel {}, pool {})",
                self.samples, self.tc2, self.pool2
            )));
        }
        Ok(())
    }

    pub fn attention_denominator(&self) -> f64 {
        match self.attention_scale {
            AttentionScale::Model => (self.d2 as f64).sqrt(),
            AttentionScale::Head => ((self.d2 / self.heads) as f64).sqrt(),
        }
    }
}
