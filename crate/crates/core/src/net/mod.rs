//! The proposal network: base module, boundary head, multilevel proposal feature generation,
//! sparse extraction confidence head, plus the boundary-matching baseline used for cost
//! comparisons.

mod bands;
pub mod bmn;
mod model;
mod params;
pub mod reference;

pub use bands::{build_masks, cell_bands, BandMask, BandSpec, MaskSemantics};
pub use model::{base_module, boundary_head, forward, mpfg_forward, sec_head, Outputs, Prediction, Smbg};
pub use params::{layout, param_specs, Layout, ModelParams, ParamSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Channels of the input feature sequence.
    pub input_channels: usize,
    pub base_hidden: usize,
    /// Channels of the base module output; each band branch keeps this width.
    pub feature_channels: usize,
    pub temporal_length: usize,
    pub bands: BandSpec,
    pub mask_semantics: MaskSemantics,
    pub dilation: usize,
    pub sec_kernel: usize,
    pub sec_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 400,
            base_hidden: 256,
            feature_channels: 128,
            temporal_length: 100,
            bands: BandSpec::standard(),
            mask_semantics: MaskSemantics::Duration,
            dilation: 7,
            sec_kernel: 3,
            sec_hidden: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temporal_length < 1 {
            return Err(Error::invalid("temporal length must be at least 1"));
        }
        for (name, v) in [
            ("input_channels", self.input_channels),
            ("base_hidden", self.base_hidden),
            ("sec_hidden", self.sec_hidden),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.feature_channels < 2 {
            return Err(Error::invalid("feature_channels must be at least 2"));
        }
        if self.dilation < 1 {
            return Err(Error::invalid("dilation rate must be at least 1"));
        }
        if self.sec_kernel.is_multiple_of(2) {
            return Err(Error::invalid("confidence head kernel must be odd"));
        }
        self.bands.validate_for(self.temporal_length)
    }
}
