use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the per-modality streams become one frame-level score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionVariant {
    /// Concatenate the streams per frame and apply one sigmoid head.
    Early,
    /// Average the three modality heads' probabilities.
    Late,
    /// Gated streams through cross-modal attention, then the fused head.
    Dcm,
}

impl FromStr for FusionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "early" => Ok(Self::Early),
            "late" => Ok(Self::Late),
            "dcm" => Ok(Self::Dcm),
            other => Err(Error::Config(format!("unknown fusion variant {other:?}"))),
        }
    }
}

impl fmt::Display for FusionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Early => "early",
            Self::Late => "late",
            Self::Dcm => "dcm",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionalEncoding {
    None,
    Sinusoidal,
}

impl FromStr for PositionalEncoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "sinusoidal" => Ok(Self::Sinusoidal),
            other => Err(Error::Config(format!("unknown positional encoding {other:?}"))),
        }
    }
}

impl fmt::Display for PositionalEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Sinusoidal => "sinusoidal",
        })
    }
}

/// Network shape and module toggles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input feature widths for video, audio, text.
    pub input_dims: [usize; 3],
    pub hidden: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub use_encoder: bool,
    pub use_cma: bool,
    pub use_dms: bool,
    pub use_contrast: bool,
    pub use_mamil: bool,
    pub fusion: FusionVariant,
    pub positional: PositionalEncoding,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::with_dims([768, 128, 768])
    }
}

impl ModelConfig {
    /// Full model with default widths (D = 128, 4 heads, FFN 2D).
    pub fn with_dims(input_dims: [usize; 3]) -> Self {
        Self {
            input_dims,
            hidden: 128,
            heads: 4,
            ffn_width: 256,
            use_encoder: true,
            use_cma: true,
            use_dms: true,
            use_contrast: true,
            use_mamil: true,
            fusion: FusionVariant::Dcm,
            positional: PositionalEncoding::Sinusoidal,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 {
            return Err(Error::Config(format!(
                "hidden width {} and heads {} must be positive",
                self.hidden, self.heads
            )));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden width {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.ffn_width == 0 || self.input_dims.contains(&0) {
            return Err(Error::Config(format!(
                "ffn width {} / input widths {:?} must be positive",
                self.ffn_width, self.input_dims
            )));
        }
        Ok(())
    }

    /// Per-head width `D / heads`.
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Gates only exist in the DCM variant.
    pub fn gates_active(&self) -> bool {
        self.fusion == FusionVariant::Dcm && self.use_dms
    }

    pub fn cma_active(&self) -> bool {
        self.fusion == FusionVariant::Dcm && self.use_cma
    }

    /// Per-modality heads: always for late fusion, for DCM only when the
    /// modality-aware MIL needs them.
    pub fn branches_active(&self) -> bool {
        match self.fusion {
            FusionVariant::Early => false,
            FusionVariant::Late => true,
            FusionVariant::Dcm => self.use_mamil,
        }
    }

    /// The seven module combinations of the incremental ablation grid, in order.
    pub fn ablation_grid(&self) -> Vec<(&'static str, ModelConfig)> {
        let row = |fusion, enc, cma, dms, con, mil| ModelConfig {
            fusion,
            use_encoder: enc,
            use_cma: cma,
            use_dms: dms,
            use_contrast: con,
            use_mamil: mil,
            ..self.clone()
        };
        use FusionVariant::*;
        vec![
            ("early_fusion", row(Early, false, false, false, false, false)),
            ("early_fusion+encoder", row(Early, true, false, false, false, false)),
            ("late_fusion+encoder", row(Late, true, false, false, false, false)),
            ("encoder+cma", row(Dcm, true, true, false, false, false)),
            ("encoder+cma+dms", row(Dcm, true, true, true, false, false)),
            ("encoder+cma+dms+contrast", row(Dcm, true, true, true, true, false)),
            ("full", row(Dcm, true, true, true, true, true)),
        ]
    }
}
