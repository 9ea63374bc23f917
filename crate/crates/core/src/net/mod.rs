//! Convolutional Q-network: architecture descriptor, parameters, an exact
//! hand-written backward pass, Adam, checkpoints, and gradient checking.
//!
//! Topology: the three frames of a [`StateSeq`](crate::env::StateSeq) enter
//! as three channels; four stages of conv -> batch-norm -> ReLU -> 2x2
//! max-pool; an optional 1x1 projection (+bias, ReLU) shrinks the final map;
//! the flattened image vector is concatenated with an equally sized
//! embedding of the three previous actions; two ReLU fully connected layers
//! and a linear head produce one Q value per action.

mod adam;
mod checkpoint;
mod forward;
mod gradcheck;
mod params;
mod scalar;

pub use adam::Adam;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use forward::{
    apply_running_update, qnet_backward, qnet_forward, BatchStats, ForwardCache, ForwardOutput,
};
pub use gradcheck::{gradient_check, gradient_check_model, Differentiable, LinearProbe, QNetProbe};
pub use params::{init_params, BnStats, ConvStage, Dense, Gradients, QNetParams, Weights};
pub use scalar::Scalar;

use serde::{Deserialize, Serialize};

use crate::env::NUM_ACTIONS;
use crate::error::{Error, Result};

/// Batch-norm running-statistics momentum (weight on the old value).
pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Batch statistics in batch-norm; activations cached for backward.
    Train,
    /// Running statistics; no cache.
    Infer,
}

fn default_input() -> usize {
    64
}
fn default_channels() -> [usize; 4] {
    [16, 32, 64, 64]
}
fn default_kernel() -> usize {
    3
}
fn default_proj() -> usize {
    32
}
fn default_fc() -> usize {
    256
}
fn default_vocab() -> usize {
    6
}
fn default_history() -> usize {
    3
}
fn default_outputs() -> usize {
    NUM_ACTIONS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetArch {
    /// Square input side in pixels; divisible by 16.
    #[serde(default = "default_input")]
    pub input_size: usize,
    #[serde(default = "default_channels")]
    pub conv_channels: [usize; 4],
    /// Odd kernel side; convolutions are stride 1 with same padding.
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
    /// Output channels of the 1x1 projection after the last stage; 0 disables it.
    #[serde(default = "default_proj")]
    pub proj_channels: usize,
    #[serde(default = "default_fc")]
    pub fc_width: usize,
    /// Distinct action codes including the null padding code.
    #[serde(default = "default_vocab")]
    pub action_vocab: usize,
    #[serde(default = "default_history")]
    pub action_history: usize,
    #[serde(default = "default_outputs")]
    pub num_outputs: usize,
}

impl Default for NetArch {
    fn default() -> Self {
        Self {
            input_size: default_input(),
            conv_channels: default_channels(),
            kernel_size: default_kernel(),
            proj_channels: default_proj(),
            fc_width: default_fc(),
            action_vocab: default_vocab(),
            action_history: default_history(),
            num_outputs: default_outputs(),
        }
    }
}

impl NetArch {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("net: {msg}")));
        if self.input_size < 16 || !self.input_size.is_multiple_of(16) {
            return fail(format!(
                "input_size {} must be a positive multiple of 16",
                self.input_size
            ));
        }
        if self.kernel_size.is_multiple_of(2) {
            return fail(format!("kernel_size {} must be odd", self.kernel_size));
        }
        if self.conv_channels.contains(&0) || self.fc_width == 0 {
            return fail("channel counts and fc_width must be positive".into());
        }
        if self.action_vocab != NUM_ACTIONS + 1 {
            return fail(format!("action_vocab must be {}", NUM_ACTIONS + 1));
        }
        if self.action_history != 3 {
            return fail("action_history must be 3".into());
        }
        if self.num_outputs != NUM_ACTIONS {
            return fail(format!("num_outputs must be {NUM_ACTIONS}"));
        }
        Ok(())
    }

    /// Spatial side of the map entering stage `s` (0-based).
    pub(crate) fn stage_side(&self, s: usize) -> usize {
        self.input_size >> s
    }

    pub(crate) fn stage_in_channels(&self, s: usize) -> usize {
        if s == 0 {
            self.action_history
        } else {
            self.conv_channels[s - 1]
        }
    }

    /// Side of the final (post-pool) feature map.
    pub(crate) fn final_side(&self) -> usize {
        self.input_size >> 4
    }

    pub(crate) fn final_channels(&self) -> usize {
        if self.proj_channels > 0 {
            self.proj_channels
        } else {
            self.conv_channels[3]
        }
    }

    /// Length of the flattened image vector (and of the action vector).
    pub fn feature_len(&self) -> usize {
        self.final_channels() * self.final_side() * self.final_side()
    }

    /// Learnable rows of the action embedding: one per (slot, executable code).
    pub(crate) fn embed_rows(&self) -> usize {
        self.action_history * (self.action_vocab - 1)
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut out = Vec::new();
        for s in 0..4 {
            let side = self.stage_side(s);
            out.push(LayerShape::Conv {
                in_ch: self.stage_in_channels(s),
                out_ch: self.conv_channels[s],
                kernel: self.kernel_size,
                out_side: side,
                bias: false,
                batch_norm: true,
            });
        }
        if self.proj_channels > 0 {
            out.push(LayerShape::Conv {
                in_ch: self.conv_channels[3],
                out_ch: self.proj_channels,
                kernel: 1,
                out_side: self.final_side(),
                bias: true,
                batch_norm: false,
            });
        }
        let v = self.feature_len();
        out.push(LayerShape::Embedding {
            rows: self.embed_rows(),
            one_hot_dim: self.action_history * self.action_vocab,
            width: v,
        });
        out.push(LayerShape::Dense {
            n_in: 2 * v,
            n_out: self.fc_width,
        });
        out.push(LayerShape::Dense {
            n_in: self.fc_width,
            n_out: self.fc_width,
        });
        out.push(LayerShape::Dense {
            n_in: self.fc_width,
            n_out: self.num_outputs,
        });
        out
    }

    pub fn count_params(&self) -> u64 {
        count_layer_params(&self.layers())
    }

    pub fn count_macs(&self) -> u64 {
        count_layer_macs(&self.layers())
    }
}

/// Shape summary of one layer, for parameter and MAC accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerShape {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        out_side: usize,
        #[serde(default)]
        bias: bool,
        #[serde(default)]
        batch_norm: bool,
    },
    /// Fully connected with bias.
    Dense { n_in: usize, n_out: usize },
    /// One-hot input of `one_hot_dim` mapped through `rows` learnable rows
    /// (null-code rows are implicit zeros).
    Embedding {
        rows: usize,
        one_hot_dim: usize,
        width: usize,
    },
}

impl LayerShape {
    pub fn params(&self) -> u64 {
        match *self {
            LayerShape::Conv {
                in_ch,
                out_ch,
                kernel,
                bias,
                batch_norm,
                ..
            } => {
                let w = out_ch * in_ch * kernel * kernel;
                (w + if bias { out_ch } else { 0 } + if batch_norm { 2 * out_ch } else { 0 }) as u64
            }
            LayerShape::Dense { n_in, n_out } => (n_in * n_out + n_out) as u64,
            LayerShape::Embedding { rows, width, .. } => (rows * width) as u64,
        }
    }

    /// Multiply-accumulates for one sample; batch-norm and pooling excluded.
    pub fn macs(&self) -> u64 {
        match *self {
            LayerShape::Conv {
                in_ch,
                out_ch,
                kernel,
                out_side,
                ..
            } => (out_ch * out_side * out_side * in_ch * kernel * kernel) as u64,
            LayerShape::Dense { n_in, n_out } => (n_in * n_out) as u64,
            LayerShape::Embedding {
                one_hot_dim, width, ..
            } => (one_hot_dim * width) as u64,
        }
    }
}

pub fn count_layer_params(layers: &[LayerShape]) -> u64 {
    layers.iter().map(LayerShape::params).sum()
}

pub fn count_layer_macs(layers: &[LayerShape]) -> u64 {
    layers.iter().map(LayerShape::macs).sum()
}

/// Exact learnable-parameter count of `arch`.
pub fn count_params(arch: &NetArch) -> u64 {
    arch.count_params()
}

/// MACs of one inference forward at batch 1.
pub fn count_macs(arch: &NetArch) -> u64 {
    arch.count_macs()
}
