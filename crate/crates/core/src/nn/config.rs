//! Architecture description covering the default backbone and every ablation
//! variant.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum input length accepted by the stem.
pub const MIN_INPUT_LEN: usize = 32;

/// Number of raw IMU channels (gyro xyz + accel xyz).
pub const IMU_CHANNELS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StemKind {
    /// Kernel 4, stride 4 patchifying convolution.
    NonoverlapK4s4,
    /// Kernel 7 / stride 2 / pad 3 convolution followed by a 3/2/1 max pool.
    Conv7s2Maxpool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    BatchNorm,
    LayerNorm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatingAxis {
    /// One gate per time step from channel-wise mean/max.
    Time,
    /// One gate per channel from temporal mean/max.
    Channel,
}

impl fmt::Display for StemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StemKind::NonoverlapK4s4 => "nonoverlap_k4s4",
            StemKind::Conv7s2Maxpool => "conv7s2_maxpool",
        })
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::BatchNorm => "batch_norm",
            NormKind::LayerNorm => "layer_norm",
        })
    }
}

impl fmt::Display for GatingAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GatingAxis::Time => "time",
            GatingAxis::Channel => "channel",
        })
    }
}

/// Complete architectural description of a backbone.
///
/// Serialized as a flat TOML table; unknown keys are rejected and missing keys
/// take the default (full) configuration.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub stem_kind: StemKind,
    pub stage_depths: [usize; 4],
    pub stage_widths: [usize; 4],
    /// Base kernel `k` of each wing; branch kernels are `(1, k, 3k + 2)`.
    pub wing_kernel_bases: [usize; 2],
    pub norm_kind: NormKind,
    pub stgu_enabled: bool,
    pub stgu_gating_axis: GatingAxis,
    pub stgu_value_kernel: usize,
    pub output_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stem_kind: StemKind::NonoverlapK4s4,
            stage_depths: [2, 2, 6, 2],
            stage_widths: [96, 192, 384, 768],
            wing_kernel_bases: [3, 5],
            norm_kind: NormKind::BatchNorm,
            stgu_enabled: true,
            stgu_gating_axis: GatingAxis::Time,
            stgu_value_kernel: 3,
            output_dim: 2,
        }
    }
}

/// Rungs of the architecture ablation ladder plus the STGU ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// (i) conv7/s2 + max-pool stem, depths [2,2,2,2], widths [64,128,256,512].
    BaseAde,
    /// (ii) depths [2,2,6,2].
    Deeper,
    /// (iii) widths [96,192,384,768].
    Wider,
    /// (iv) non-overlapping k4/s4 stem.
    PatchStem,
    /// (v) every batch norm replaced with layer norm.
    LayerNorm,
    /// Full model (identical to rung iv).
    Full,
    /// Full model without the gating unit.
    WithoutStgu,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::BaseAde,
        Variant::Deeper,
        Variant::Wider,
        Variant::PatchStem,
        Variant::LayerNorm,
        Variant::Full,
        Variant::WithoutStgu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::BaseAde => "i_base_ade",
            Variant::Deeper => "ii_deeper",
            Variant::Wider => "iii_wider",
            Variant::PatchStem => "iv_patch_stem",
            Variant::LayerNorm => "v_layer_norm",
            Variant::Full => "full",
            Variant::WithoutStgu => "wo_stgu",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    pub fn config(self) -> ModelConfig {
        let full = ModelConfig::default();
        match self {
            Variant::BaseAde => ModelConfig {
                stem_kind: StemKind::Conv7s2Maxpool,
                stage_depths: [2, 2, 2, 2],
                stage_widths: [64, 128, 256, 512],
                ..full
            },
            Variant::Deeper => ModelConfig {
                stage_depths: [2, 2, 6, 2],
                ..Variant::BaseAde.config()
            },
            Variant::Wider => ModelConfig {
                stage_widths: [96, 192, 384, 768],
                ..Variant::Deeper.config()
            },
            Variant::PatchStem => ModelConfig {
                stem_kind: StemKind::NonoverlapK4s4,
                ..Variant::Wider.config()
            },
            Variant::LayerNorm => ModelConfig {
                norm_kind: NormKind::LayerNorm,
                ..Variant::PatchStem.config()
            },
            Variant::Full => full,
            Variant::WithoutStgu => ModelConfig {
                stgu_enabled: false,
                ..full
            },
        }
    }
}

impl ModelConfig {
    /// Small configuration used by gradient checks and overfit drills.
    pub fn tiny() -> Self {
        Self {
            stage_depths: [1, 1, 1, 1],
            stage_widths: [4, 8, 8, 8],
            ..Self::default()
        }
    }

    /// Desk-scale configuration used for end-to-end training runs.
    pub fn desk() -> Self {
        Self {
            stage_widths: [32, 64, 128, 256],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &w) in self.stage_widths.iter().enumerate() {
            if w == 0 || w % 2 != 0 {
                return Err(Error::Config(format!(
                    "stage {} width {w} must be a positive even number",
                    i + 1
                )));
            }
        }
        if self.stage_depths.contains(&0) {
            return Err(Error::Config("stage depths must be at least 1".into()));
        }
        for &k in &self.wing_kernel_bases {
            if k % 2 == 0 {
                return Err(Error::Config(format!("wing kernel base {k} must be odd")));
            }
        }
        if self.stgu_value_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "gating value kernel {} must be odd",
                self.stgu_value_kernel
            )));
        }
        if self.output_dim == 0 {
            return Err(Error::Config("output_dim must be at least 1".into()));
        }
        Ok(())
    }

    /// Kernel sizes `(1, k, 3k + 2)` of wing `j`.
    pub fn branch_kernels(&self, wing: usize) -> [usize; 3] {
        let k = self.wing_kernel_bases[wing];
        [1, k, 3 * k + 2]
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::data(path, e.to_string()))
    }
}
