use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::PoolMode;

/// Projection-learning trunk shared by every variant.
#[derive(Clone, Debug, PartialEq)]
pub struct IpnConfig {
    pub plm_channels: Vec<usize>,
    pub plm_strides: Vec<usize>,
    pub convs_per_plm: usize,
    pub num_classes: usize,
    pub input_channels: usize,
    pub pool_mode: PoolMode,
}

impl Default for IpnConfig {
    fn default() -> Self {
        IpnConfig {
            plm_channels: vec![16, 32, 64, 128],
            plm_strides: vec![2, 4, 4, 5],
            convs_per_plm: 2,
            num_classes: 2,
            input_channels: 2,
            pool_mode: PoolMode::Max,
        }
    }
}

impl IpnConfig {
    /// Patch height the trunk collapses to one.
    pub fn working_height(&self) -> usize {
        self.plm_strides.iter().product()
    }
}

/// U-Net appended to the trunk in IPN-V2.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanePerceptronConfig {
    pub unet_depth: usize,
    pub base_channels: usize,
    pub penultimate_channels: usize,
}

impl Default for PlanePerceptronConfig {
    fn default() -> Self {
        PlanePerceptronConfig { unet_depth: 3, base_channels: 32, penultimate_channels: 16 }
    }
}

/// U-Net trained on spliced penultimate features.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalNetConfig {
    pub unet_depth: usize,
    pub base_channels: usize,
}

impl Default for GlobalNetConfig {
    fn default() -> Self {
        GlobalNetConfig { unet_depth: 2, base_channels: 16 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Variant {
    Ipn,
    #[default]
    IpnV2,
    IpnV2Plus,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Ipn, Variant::IpnV2, Variant::IpnV2Plus];

    pub fn has_plane_perceptron(self) -> bool {
        !matches!(self, Variant::Ipn)
    }

    pub fn has_global(self) -> bool {
        matches!(self, Variant::IpnV2Plus)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ipn" => Ok(Variant::Ipn),
            "ipnv2" => Ok(Variant::IpnV2),
            "ipnv2plus" => Ok(Variant::IpnV2Plus),
            other => Err(Error::InvalidArgument(format!("unknown variant `{other}` (expected ipn|ipnv2|ipnv2plus)"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Ipn => "ipn",
            Variant::IpnV2 => "ipnv2",
            Variant::IpnV2Plus => "ipnv2plus",
        })
    }
}

/// Full architecture description.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetworkConfig {
    pub variant: Variant,
    pub ipn: IpnConfig,
    pub plane: PlanePerceptronConfig,
    pub global: GlobalNetConfig,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let ipn = &self.ipn;
        if ipn.plm_channels.is_empty() || ipn.plm_channels.len() != ipn.plm_strides.len() {
            return bad(format!(
                "plm_channels ({}) and plm_strides ({}) must be non-empty and of equal length",
                ipn.plm_channels.len(),
                ipn.plm_strides.len()
            ));
        }
        if ipn.plm_channels.iter().chain(&ipn.plm_strides).any(|&v| v == 0) {
            return bad("plm channel counts and strides must be >= 1".into());
        }
        if ipn.convs_per_plm == 0 || ipn.input_channels == 0 {
            return bad("convs_per_plm and input_channels must be >= 1".into());
        }
        if ipn.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", ipn.num_classes));
        }
        if self.variant.has_plane_perceptron() {
            let p = &self.plane;
            if p.unet_depth == 0 || p.base_channels == 0 || p.penultimate_channels == 0 {
                return bad("plane perceptron depth and channel counts must be >= 1".into());
            }
        }
        if self.variant.has_global() && (self.global.unet_depth == 0 || self.global.base_channels == 0) {
            return bad("global net depth and base channels must be >= 1".into());
        }
        Ok(())
    }
}
