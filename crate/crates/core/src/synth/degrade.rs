//! The two ways of producing LR images from HR ones: clean smoothing and
//! pooling, and a randomised degradation standing in for real LR capture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::avg_pool2;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smoothing applied before each pooling stage of the clean operator.
pub const SUBSAMPLE_SIGMA: f64 = 0.5;

/// Ranges the realistic degradation draws from, per image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationParams {
    /// Gaussian blur σ at HR, pixels.
    pub blur_sigma: [f64; 2],
    /// Additive Gaussian noise σ at LR, in intensity units.
    pub noise_sigma: [f64; 2],
    /// Contrast reduction `j`; intensities are scaled by `1 − j` about the image mean.
    pub contrast_jitter: [f64; 2],
    pub factor: usize,
}

impl Default for DegradationParams {
    fn default() -> Self {
        DegradationParams {
            blur_sigma: [0.8, 1.6],
            noise_sigma: [0.03, 0.08],
            contrast_jitter: [0.15, 0.4],
            factor: 4,
        }
    }
}

impl DegradationParams {
    /// All ranges collapsed to zero.
    pub fn none(factor: usize) -> Self {
        DegradationParams {
            blur_sigma: [0.0, 0.0],
            noise_sigma: [0.0, 0.0],
            contrast_jitter: [0.0, 0.0],
            factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for r in [self.blur_sigma, self.noise_sigma, self.contrast_jitter] {
            if !(r[0] >= 0.0 && r[0] <= r[1] && r[1].is_finite()) {
                return Err(Error::Config(format!("invalid degradation range {r:?}")));
            }
        }
        if self.contrast_jitter[1] >= 1.0 {
            return Err(Error::Config("contrast jitter must stay below 1".into()));
        }
        if !self.factor.is_power_of_two() {
            return Err(Error::Config(format!("downsample factor {} is not a power of two", self.factor)));
        }
        Ok(())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let w: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Half-sample symmetric index: `−1 → 0`, `n → n−1`.
fn reflect(i: isize, n: isize) -> usize {
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Separable Gaussian blur of every plane of a `[.., H, W]` tensor with
/// half-sample symmetric borders. Each input pixel's total weight is exactly 1,
/// so the mean is preserved.
pub fn gaussian_blur(x: &Tensor<f32>, sigma: f64) -> Result<Tensor<f32>> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(Error::Shape(format!("blur needs at least 2 axes, got {shape:?}")));
    }
    if sigma <= 0.0 {
        return Ok(x.clone());
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0f64; h * w];
    let mut out = x.clone();
    for plane in out.data_mut().chunks_mut(h * w) {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let sx = reflect(xx as isize + j as isize - r, w as isize);
                    acc += kv * plane[y * w + sx] as f64;
                }
                tmp[y * w + xx] = acc;
            }
        }
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let sy = reflect(y as isize + j as isize - r, h as isize);
                    acc += kv * tmp[sy * w + xx];
                }
                plane[y * w + xx] = acc as f32;
            }
        }
    }
    Ok(out)
}

fn stages_for(factor: usize, side: usize) -> Result<usize> {
    if factor == 0 || !factor.is_power_of_two() || side % factor != 0 {
        return Err(Error::Config(format!("side {side} cannot be reduced by a factor of {factor}")));
    }
    Ok(factor.trailing_zeros() as usize)
}

fn pool_planes(x: &Tensor<f32>) -> Result<Tensor<f32>> {
    // accept CHW or NCHW
    if x.shape().len() == 3 {
        let s = x.shape().to_vec();
        let y = avg_pool2(&x.clone().reshape(&[1, s[0], s[1], s[2]])?)?;
        let t = y.shape().to_vec();
        y.reshape(&t[1..])
    } else {
        avg_pool2(x)
    }
}

/// Clean LR operator: per stage, smoothing with σ = 0.5 then 2×2 averaging.
/// Works on `C×H×W` or `N×C×H×W`.
pub fn subsample_f(hr: &Tensor<f32>, factor: usize) -> Result<Tensor<f32>> {
    let side = *hr.shape().last().ok_or_else(|| Error::Shape("empty shape".into()))?;
    let stages = stages_for(factor, side)?;
    let mut x = hr.clone();
    for _ in 0..stages {
        x = gaussian_blur(&x, SUBSAMPLE_SIGMA)?;
        x = pool_planes(&x)?;
    }
    Ok(x)
}

/// Randomised degradation: HR blur, pooling, contrast loss, additive noise,
/// clamping to `[−1, 1]`. `C×H×W` input.
pub fn degrade_realistic(hr: &Tensor<f32>, params: &DegradationParams, seed: u64) -> Result<Tensor<f32>> {
    params.validate()?;
    if hr.shape().len() != 3 {
        return Err(Error::Shape(format!("expected C×H×W, got {:?}", hr.shape())));
    }
    let stages = stages_for(params.factor, hr.shape()[2])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng, r: [f64; 2]| if r[1] > r[0] { rng.random_range(r[0]..r[1]) } else { r[0] };
    let blur = draw(&mut rng, params.blur_sigma);
    let noise = draw(&mut rng, params.noise_sigma);
    let jitter = draw(&mut rng, params.contrast_jitter);
    let mut x = gaussian_blur(hr, blur)?;
    for _ in 0..stages {
        x = pool_planes(&x)?;
    }
    let mean = x.mean();
    let c = (1.0 - jitter) as f32;
    let normal = Normal::new(0.0, noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    for v in x.data_mut() {
        let n = if noise > 0.0 { normal.sample(&mut rng) as f32 } else { 0.0 };
        *v = (mean + c * (*v - mean) + n).clamp(-1.0, 1.0);
    }
    Ok(x)
}

/// Variance of horizontal neighbour differences: the high-frequency energy
/// statistic separating clean from degraded LR images.
pub fn detail_variance(x: &Tensor<f32>) -> f64 {
    let w = *x.shape().last().unwrap_or(&1);
    let diffs: Vec<f64> = x
        .data()
        .chunks(w)
        .flat_map(|row| row.windows(2).map(|p| (p[1] - p[0]) as f64))
        .collect();
    if diffs.is_empty() {
        return 0.0;
    }
    let n = diffs.len() as f64;
    let m = diffs.iter().sum::<f64>() / n;
    diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / n
}
