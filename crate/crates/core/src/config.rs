use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architectural hyperparameters of the extractor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub sample_rate: u32,
    /// Encoder/decoder kernel length in samples.
    pub kernel: usize,
    /// Encoder/decoder hop in samples.
    pub stride: usize,
    pub enc_channels: usize,
    pub bottleneck_channels: usize,
    pub hidden_channels: usize,
    /// Depthwise kernel of each TCN block.
    pub tcn_kernel: usize,
    pub blocks_per_repeat: usize,
    pub repeats: usize,
    pub embed_dim: usize,
    /// 1-based index, over all separator blocks, of the block followed by
    /// the multiplicative adaptation layer.
    pub adaptation_block_index: usize,
    /// Minimum age in samples of the fed-back condition.
    pub sample_delay: usize,
    pub aux_blocks: usize,
    pub speech_branch_blocks: usize,
    pub causal: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            kernel: 16,
            stride: 8,
            enc_channels: 64,
            bottleneck_channels: 32,
            hidden_channels: 64,
            tcn_kernel: 3,
            blocks_per_repeat: 4,
            repeats: 2,
            embed_dim: 32,
            adaptation_block_index: 7,
            sample_delay: 16,
            aux_blocks: 2,
            speech_branch_blocks: 2,
            causal: true,
        }
    }
}

impl ModelConfig {
    /// A tiny network (all widths ≤ 8) for gradient checks and toy training.
    pub fn micro() -> Self {
        Self {
            enc_channels: 8,
            bottleneck_channels: 8,
            hidden_channels: 8,
            embed_dim: 8,
            aux_blocks: 1,
            speech_branch_blocks: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("sample_rate", self.sample_rate as usize),
            ("kernel", self.kernel),
            ("stride", self.stride),
            ("enc_channels", self.enc_channels),
            ("bottleneck_channels", self.bottleneck_channels),
            ("hidden_channels", self.hidden_channels),
            ("tcn_kernel", self.tcn_kernel),
            ("blocks_per_repeat", self.blocks_per_repeat),
            ("repeats", self.repeats),
            ("embed_dim", self.embed_dim),
            ("speech_branch_blocks", self.speech_branch_blocks),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.sample_delay < self.kernel {
            return Err(Error::Config(format!(
                "sample_delay {} is shorter than one frame ({} samples)",
                self.sample_delay, self.kernel
            )));
        }
        if self.adaptation_block_index == 0 || self.adaptation_block_index > self.total_blocks() {
            return Err(Error::Config(format!(
                "adaptation_block_index {} outside 1..={}",
                self.adaptation_block_index,
                self.total_blocks()
            )));
        }
        if self.stride > self.kernel {
            return Err(Error::Config(
                "stride larger than kernel leaves gaps".into(),
            ));
        }
        Ok(())
    }

    pub fn total_blocks(&self) -> usize {
        self.blocks_per_repeat * self.repeats
    }

    /// Dilation of the separator block with 0-based global index `b`.
    pub fn dilation(&self, b: usize) -> usize {
        1 << (b % self.blocks_per_repeat)
    }

    /// Encoder frame count for `len` samples, or `None` below one frame.
    pub fn frames(&self, len: usize) -> Option<usize> {
        (len >= self.kernel).then(|| (len - self.kernel) / self.stride + 1)
    }

    /// Decoder output length for `frames` frames.
    pub fn output_len(&self, frames: usize) -> usize {
        (frames - 1) * self.stride + self.kernel
    }

    pub fn with_delay(mut self, delay: usize) -> Self {
        self.sample_delay = delay;
        self
    }
}
