use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the feature extractor, part heads and domain classifiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub stage_channels: [usize; 4],
    /// Residual units per stage.
    pub blocks_per_stage: usize,
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub n_parts: usize,
    pub part_dim: usize,
    pub num_identities: usize,
    pub discriminator_hidden: usize,
    /// Start the infrared stages 1–3 as copies of the colour stages, the
    /// way both streams of a pretrained dual-stream network start from the
    /// same weights. The two streams remain separate parameter sets.
    pub mirror_stream_init: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stage_channels: [16, 32, 64, 128],
            blocks_per_stage: 2,
            input_channels: 3,
            input_height: 96,
            input_width: 48,
            n_parts: 3,
            part_dim: 64,
            num_identities: 30,
            discriminator_hidden: 64,
            mirror_stream_init: true,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

/// Stride of each stage: full resolution first, then halving.
pub const STAGE_STRIDES: [usize; 4] = [1, 2, 2, 2];

/// Number of residual stages; each one contributes an intermediate tap.
pub const NUM_LEVELS: usize = 4;

impl ModelConfig {
    /// Narrow, shallow network on half-resolution images. Roughly 25x
    /// cheaper per batch than the default; used for long experiments on a
    /// single core.
    pub fn compact() -> Self {
        Self {
            stage_channels: [8, 16, 32, 64],
            blocks_per_stage: 1,
            input_height: 48,
            input_width: 24,
            part_dim: 32,
            discriminator_hidden: 32,
            ..Self::default()
        }
    }

    /// Spatial `(height, width)` of each stage's output.
    pub fn stage_sizes(&self) -> [(usize, usize); 4] {
        let mut out = [(0, 0); 4];
        let (mut h, mut w) = (self.input_height, self.input_width);
        for (j, s) in STAGE_STRIDES.iter().enumerate() {
            // 3x3, pad 1: ceil division by the stride.
            h = (h - 1) / s + 1;
            w = (w - 1) / s + 1;
            out[j] = (h, w);
        }
        out
    }

    pub fn final_height(&self) -> usize {
        self.stage_sizes()[3].0
    }

    /// Part counts that tile the final feature map exactly.
    pub fn valid_part_counts(&self) -> Vec<usize> {
        let h = self.final_height();
        (1..=h).filter(|n| h % n == 0).collect()
    }

    pub fn descriptor_dim(&self) -> usize {
        self.n_parts * self.part_dim
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_channels", self.input_channels),
            ("input_height", self.input_height),
            ("input_width", self.input_width),
            ("n_parts", self.n_parts),
            ("part_dim", self.part_dim),
            ("num_identities", self.num_identities),
            ("discriminator_hidden", self.discriminator_hidden),
            ("blocks_per_stage", self.blocks_per_stage),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.stage_channels.contains(&0) {
            return Err(Error::Config("stage_channels must be positive".into()));
        }
        if self.num_identities < 2 {
            return Err(Error::Config("need at least two identities".into()));
        }
        let h = self.final_height();
        if h % self.n_parts != 0 {
            return Err(Error::Config(format!(
                "n_parts = {} does not divide the final feature-map height {h}; valid values: {:?}",
                self.n_parts,
                self.valid_part_counts()
            )));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return Err(Error::Config("invalid batch-norm momentum or eps".into()));
        }
        Ok(())
    }
}
