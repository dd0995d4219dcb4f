use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which of the two feature paths are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branches {
    /// Signal path, image path, and both fusion stages.
    #[default]
    Both,
    /// Signal path only; the fusion stages receive zeros in place of
    /// image-path features and there is no auxiliary output.
    SignalOnly,
    /// Image path only; its head output is the reconstruction.
    ImageOnly,
}

/// Stem kernel height (time samples per output row) of the unfolded-input stem.
pub const RAW_STEM_STRIDE: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Folded channel count `q`.
    pub in_channels_q: usize,
    /// Image side `N`; must be divisible by 16.
    pub side_n: usize,
    pub enc_widths: [usize; 4],
    pub sfe_width: usize,
    /// `true`: the network consumes the folded cube. `false`: it consumes the
    /// raw signal zero-padded to `20N × N` through a 20×3, stride-20 stem.
    pub use_ft_stem: bool,
    #[serde(default)]
    pub branches: Branches,
    pub seed: u64,
}

impl NetConfig {
    /// Full-width network (encoder widths 32..256, image path 64).
    pub fn full_size(in_channels_q: usize, side_n: usize, seed: u64) -> Self {
        Self {
            in_channels_q,
            side_n,
            enc_widths: [32, 64, 128, 256],
            sfe_width: 64,
            use_ft_stem: true,
            branches: Branches::Both,
            seed,
        }
    }

    /// Half-width network used for CPU-scale experiments.
    pub fn desk(in_channels_q: usize, side_n: usize, seed: u64) -> Self {
        Self {
            enc_widths: [16, 32, 64, 128],
            sfe_width: 32,
            ..Self::full_size(in_channels_q, side_n, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.side_n == 0 || !self.side_n.is_multiple_of(16) {
            return Err(Error::Validation(format!(
                "side_n must be a positive multiple of 16, got {}",
                self.side_n
            )));
        }
        if self.in_channels_q == 0 || self.sfe_width == 0 || self.enc_widths.contains(&0) {
            return Err(Error::Validation(
                "channel counts and widths must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn has_signal_path(&self) -> bool {
        self.branches != Branches::ImageOnly
    }

    pub fn has_image_path(&self) -> bool {
        self.branches == Branches::Both || self.branches == Branches::ImageOnly
    }

    /// Input shape of the signal path for a batch of `b`.
    pub fn signal_input_shape(&self, b: usize) -> [usize; 4] {
        if self.use_ft_stem {
            [b, self.in_channels_q, self.side_n, self.side_n]
        } else {
            [b, 1, RAW_STEM_STRIDE * self.side_n, self.side_n]
        }
    }

    /// Width of each branch of the bottom atrous block.
    pub fn branch_width(&self) -> usize {
        (self.enc_widths[3] / 4).max(1)
    }

    /// Hidden width of the image-path bottlenecks.
    pub fn bottleneck_width(&self) -> usize {
        (self.sfe_width / 4).max(1)
    }

    /// Width of the final 3×3 convolutions.
    pub fn head_width(&self) -> usize {
        self.enc_widths[0]
    }
}
