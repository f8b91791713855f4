use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scale profile: `Full` is 128→32 with 19 keypoints, `Desk` is 64→16 with 5.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Full,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(Error::Config(format!("unknown profile {other:?} (desk|full)"))),
        }
    }
}

impl Profile {
    pub fn hr_size(self) -> usize {
        match self {
            Profile::Desk => 64,
            Profile::Full => 128,
        }
    }

    pub fn lr_size(self) -> usize {
        match self {
            Profile::Desk => 16,
            Profile::Full => 32,
        }
    }

    pub fn factor(self) -> usize {
        self.hr_size() / self.lr_size()
    }

    pub fn default_keypoints(self) -> usize {
        match self {
            Profile::Desk => 5,
            Profile::Full => 19,
        }
    }
}

/// High-to-low generator: encoder stages of two residual blocks plus a widening
/// convolution and a max-pool, a decoder of two-block stages with narrowing
/// convolutions and ×2 upsampling, and a final three-channel convolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct G1Spec {
    pub hr_size: usize,
    pub lr_size: usize,
    pub noise_len: usize,
    /// Width of stage `s` is `encoder[s]`; its closing convolution widens to `encoder[s+1]`.
    pub encoder: Vec<usize>,
    /// Decoder stage widths; the closing convolution narrows to the next entry.
    pub decoder: Vec<usize>,
    pub blocks_per_stage: usize,
    /// Spatial size at the bottleneck.
    pub bottleneck: usize,
    /// Add the area-averaged input before the output squashing, so the network
    /// only has to learn the degradation on top of a plain downsampling.
    #[serde(default)]
    pub input_skip: bool,
}

/// Residual-trunk discriminator with a scalar head (D1, and D3 with extra input channels).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscSpec {
    pub in_channels: usize,
    pub size: usize,
    pub widths: Vec<usize>,
    /// Number of trailing stages followed by a max-pool.
    pub pooled_stages: usize,
    pub spectral_norm: bool,
    pub power_iterations: usize,
}

/// U-shaped heatmap network (G2, and D2 with the heatmaps as extra input).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub size: usize,
    /// Width of each encoder group; the decoder mirrors it.
    pub widths: Vec<usize>,
    pub blocks_per_group: usize,
}

impl G1Spec {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => G1Spec {
                hr_size: 64,
                lr_size: 16,
                noise_len: 64,
                encoder: vec![4, 8, 16, 24, 32],
                decoder: vec![32, 24, 16, 16],
                blocks_per_stage: 2,
                bottleneck: 4,
                input_skip: true,
            },
            Profile::Full => G1Spec {
                hr_size: 128,
                lr_size: 32,
                noise_len: 64,
                encoder: vec![16, 32, 64, 128, 256],
                decoder: vec![256, 128, 64, 32],
                blocks_per_stage: 2,
                bottleneck: 4,
                input_skip: true,
            },
        }
    }

    pub fn encoder_stages(&self) -> usize {
        self.encoder.len() - 1
    }

    pub fn decoder_stages(&self) -> usize {
        self.decoder.len() - 1
    }

    /// Pools needed to go from HR to the bottleneck.
    pub fn pools(&self) -> usize {
        log2_exact(self.hr_size / self.bottleneck)
    }

    pub fn upsamples(&self) -> usize {
        log2_exact(self.lr_size / self.bottleneck)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.hr_size.is_power_of_two()
            && self.lr_size.is_power_of_two()
            && self.bottleneck.is_power_of_two()
            && self.bottleneck <= self.lr_size
            && self.lr_size <= self.hr_size
            && self.encoder.len() >= 2
            && self.decoder.len() >= 2
            && self.pools() >= self.encoder_stages()
            && self.pools() <= self.encoder_stages() + 1
            && self.upsamples() <= self.decoder_stages();
        if !ok {
            return Err(Error::Config(format!("inconsistent G1 spec {self:?}")));
        }
        Ok(())
    }
}

impl DiscSpec {
    pub fn d1(profile: Profile) -> Self {
        DiscSpec {
            in_channels: 3,
            size: profile.lr_size(),
            widths: match profile {
                Profile::Desk => vec![16, 16, 32, 32],
                Profile::Full => vec![64, 64, 128, 256],
            },
            pooled_stages: 3,
            spectral_norm: true,
            power_iterations: 1,
        }
    }

    pub fn d3(profile: Profile, keypoints: usize) -> Self {
        DiscSpec {
            in_channels: 3 + keypoints + 1,
            ..Self::d1(profile)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pooled_stages > self.widths.len() || self.size >> self.pooled_stages == 0 || self.widths.is_empty() {
            return Err(Error::Config(format!("inconsistent discriminator spec {self:?}")));
        }
        Ok(())
    }
}

impl UNetSpec {
    pub fn g2(profile: Profile, keypoints: usize) -> Self {
        UNetSpec {
            in_channels: 3,
            out_channels: keypoints + 1,
            size: profile.lr_size(),
            widths: match profile {
                Profile::Desk => vec![16, 24, 32, 32],
                Profile::Full => vec![64, 128, 128, 256],
            },
            blocks_per_group: 2,
        }
    }

    /// HR-resolution heatmap generator for the supervised HR-LD configuration.
    pub fn hr_ld(profile: Profile, keypoints: usize) -> Self {
        UNetSpec {
            size: profile.hr_size(),
            widths: match profile {
                Profile::Desk => vec![8, 16, 24, 32],
                Profile::Full => vec![64, 128, 128, 256],
            },
            ..Self::g2(profile, keypoints)
        }
    }

    pub fn d2(profile: Profile, keypoints: usize) -> Self {
        UNetSpec {
            in_channels: keypoints + 1 + 3,
            ..Self::g2(profile, keypoints)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.size % (1 << self.widths.len()) != 0 {
            return Err(Error::Config(format!("inconsistent U-Net spec {self:?}")));
        }
        Ok(())
    }
}

fn log2_exact(x: usize) -> usize {
    x.max(1).trailing_zeros() as usize
}
