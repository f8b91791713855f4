//! Synthetic faces with exact landmarks, the two LR domains, the heatmap
//! codec, augmentation and the on-disk dataset format.

mod augment;
mod degrade;
mod face;
mod heatmap;
pub mod io;

pub use augment::{apply_affine, augment, invert_affine, sample_bilinear, warp_image, warp_sample, Affine, WarpParams};
pub use degrade::{degrade_realistic, detail_variance, gaussian_blur, subsample_f, DegradationParams, SUBSAMPLE_SIGMA};
pub use face::{canonical_landmarks, generate_face, pupil_indices, pupils, FaceConfig, Pose};
pub use heatmap::{decode_heatmaps, downsample_landmarks, encode_heatmaps, Decoded, HEATMAP_SIGMA, VISIBILITY_THRESHOLD};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::Profile;
use crate::tensor::Tensor;

/// An image (`3×H×W`, values in `[−1, 1]`) with its landmarks in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceSample {
    pub image: Tensor<f32>,
    pub landmarks: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
    /// `(x, y, w, h)`.
    pub bbox: [f64; 4],
}

impl FaceSample {
    pub fn side(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn keypoints(&self) -> usize {
        self.landmarks.len()
    }

    /// Same face at `1/factor` scale, with `image` as the new raster.
    pub fn with_lr_image(&self, image: Tensor<f32>, factor: usize) -> Result<FaceSample> {
        let f = factor as f64;
        let landmarks = downsample_landmarks(&self.landmarks, f)?;
        let limit = image.shape()[2] as f64 - 1.0;
        let visible = landmarks
            .iter()
            .zip(&self.visible)
            .map(|(p, &v)| v && (0.0..=limit).contains(&p[0]) && (0.0..=limit).contains(&p[1]))
            .collect();
        let [x, y, w, h] = self.bbox;
        Ok(FaceSample {
            image,
            landmarks,
            visible,
            bbox: [x / f, y / f, w / f, h / f],
        })
    }

    /// Ground-truth heatmap stack at the sample's own resolution.
    pub fn heatmaps(&self) -> Result<Tensor<f32>> {
        encode_heatmaps(&self.landmarks, &self.visible, self.side(), HEATMAP_SIGMA)
    }
}

/// SplitMix64 finaliser: decorrelated per-sample seeds from one base seed.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stream {
    Train = 1,
    Val = 2,
    Test = 3,
    RealFaces = 4,
    RealDegrade = 5,
    TestDegrade = 6,
}

/// Sizes and randomness of a synthetic benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub profile: Profile,
    pub face: FaceConfig,
    pub degradation: DegradationParams,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Unlabelled real-LR pool, drawn from faces disjoint from every labelled split.
    pub real_lr: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Desk)
    }
}

impl SynthConfig {
    pub fn for_profile(profile: Profile) -> Self {
        SynthConfig {
            profile,
            face: FaceConfig {
                size: profile.hr_size(),
                keypoints: profile.default_keypoints(),
                ..Default::default()
            },
            degradation: DegradationParams {
                factor: profile.factor(),
                ..Default::default()
            },
            train: 2000,
            val: 200,
            test: 400,
            real_lr: 2000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.face.validate()?;
        self.degradation.validate()?;
        if self.face.size != self.profile.hr_size() || self.degradation.factor != self.profile.factor() {
            return Err(Error::Config(format!(
                "profile {:?} needs {}px faces and factor {}",
                self.profile,
                self.profile.hr_size(),
                self.profile.factor()
            )));
        }
        Ok(())
    }

    pub fn factor(&self) -> usize {
        self.degradation.factor
    }
}

/// Every split of a synthetic benchmark, in memory.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub train: Vec<FaceSample>,
    pub val: Vec<FaceSample>,
    pub test: Vec<FaceSample>,
    /// Unlabelled degraded LR images.
    pub real_lr: Vec<Tensor<f32>>,
    /// Degraded LR versions of the test faces, with downsampled labels.
    pub test_real_lr: Vec<FaceSample>,
}

fn faces(cfg: &SynthConfig, stream: Stream, n: usize) -> Result<Vec<FaceSample>> {
    (0..n)
        .map(|i| generate_face(derive_seed(cfg.seed, stream as u64, i as u64), &cfg.face))
        .collect()
}

pub fn generate_dataset(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let train = faces(cfg, Stream::Train, cfg.train)?;
    let val = faces(cfg, Stream::Val, cfg.val)?;
    let test = faces(cfg, Stream::Test, cfg.test)?;
    let real_lr = faces(cfg, Stream::RealFaces, cfg.real_lr)?
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let seed = derive_seed(cfg.seed, Stream::RealDegrade as u64, i as u64);
            degrade_realistic(&f.image, &cfg.degradation, seed)
        })
        .collect::<Result<_>>()?;
    let test_real_lr = test
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let seed = derive_seed(cfg.seed, Stream::TestDegrade as u64, i as u64);
            f.with_lr_image(degrade_realistic(&f.image, &cfg.degradation, seed)?, cfg.factor())
        })
        .collect::<Result<_>>()?;
    Ok(SynthData {
        train,
        val,
        test,
        real_lr,
        test_real_lr,
    })
}

/// Clean LR copies (`F(HR)` with downsampled labels) of HR samples.
pub fn subsampled_split(samples: &[FaceSample], factor: usize) -> Result<Vec<FaceSample>> {
    samples
        .iter()
        .map(|s| s.with_lr_image(subsample_f(&s.image, factor)?, factor))
        .collect()
}
