use serde::{Deserialize, Serialize};

use crate::error::{OpgError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub stride: usize,
}

/// Per-channel input standardization applied inside the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalize {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

/// Encoder layout and head size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub conv_layers: Vec<ConvLayer>,
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
    #[serde(default = "default_slope")]
    pub leaky_slope: f32,
    /// Seen classes.
    pub r: usize,
    /// Pre-allocated pseudo-unseen head nodes.
    pub r_prime: usize,
    /// `(height, width, channels)`.
    pub input_shape: (usize, usize, usize),
    #[serde(default)]
    pub normalize: Option<Normalize>,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f32,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f32,
}

fn default_kernel() -> usize {
    3
}
fn default_slope() -> f32 {
    0.2
}
fn default_bn_momentum() -> f32 {
    0.1
}
fn default_bn_eps() -> f32 {
    1e-5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Ten 3x3 conv layers, downsampling at layers 3, 6 and 9.
    PaperCifar,
    /// Same encoder as `PaperCifar`; differs only in schedule.
    PaperTiny,
    /// Four conv layers for CPU-scale runs.
    Desk,
}

impl Preset {
    pub fn conv_layers(&self) -> Vec<ConvLayer> {
        let plan: &[(usize, usize)] = match self {
            Preset::PaperCifar | Preset::PaperTiny => &[
                (64, 1),
                (64, 1),
                (128, 2),
                (128, 1),
                (128, 1),
                (128, 2),
                (128, 1),
                (128, 1),
                (128, 2),
                (128, 1),
            ],
            Preset::Desk => &[(16, 1), (32, 2), (32, 1), (64, 2)],
        };
        plan.iter()
            .map(|&(out_channels, stride)| ConvLayer { out_channels, stride })
            .collect()
    }
}

impl ModelSpec {
    pub fn from_preset(preset: Preset, r: usize, r_prime: usize, input_shape: (usize, usize, usize)) -> Self {
        ModelSpec {
            conv_layers: preset.conv_layers(),
            kernel_size: 3,
            leaky_slope: 0.2,
            r,
            r_prime,
            input_shape,
            normalize: None,
            bn_momentum: default_bn_momentum(),
            bn_eps: default_bn_eps(),
        }
    }

    pub fn head_width(&self) -> usize {
        self.r + self.r_prime
    }

    /// Width of the pooled feature vector feeding the head.
    pub fn feature_width(&self) -> usize {
        self.conv_layers.last().map_or(self.input_shape.2, |l| l.out_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.r < 2 {
            return Err(OpgError::config("model.r", "need at least 2 seen classes"));
        }
        if self.r_prime < 1 {
            return Err(OpgError::config("model.r_prime", "need at least 1 pseudo-unseen node"));
        }
        if self.kernel_size != 3 {
            return Err(OpgError::config("model.kernel_size", "only 3x3 kernels are supported"));
        }
        if self.conv_layers.is_empty() {
            return Err(OpgError::config("model.conv_layers", "need at least one conv layer"));
        }
        if let Some(l) = self.conv_layers.iter().find(|l| l.out_channels == 0 || l.stride == 0) {
            return Err(OpgError::config("model.conv_layers", format!("invalid layer {l:?}")));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(OpgError::config("model.leaky_slope", "must be in (0, 1)"));
        }
        let (h, w, c) = self.input_shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(OpgError::config("model.input_shape", "dimensions must be positive"));
        }
        if let Some(n) = &self.normalize {
            if n.mean.len() != c || n.std.len() != c || n.std.iter().any(|s| *s <= 0.0) {
                return Err(OpgError::config(
                    "model.normalize",
                    format!("need {c} means and {c} positive stds"),
                ));
            }
        }
        Ok(())
    }
}
