//! Gaussian heatmap encoding and sub-pixel argmax decoding.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const HEATMAP_SIGMA: f64 = 2.0;

/// Peaks below this decode as invisible.
pub const VISIBILITY_THRESHOLD: f64 = 0.1;

/// `(K+1)×S×S` stack: a unit-amplitude Gaussian per visible landmark, an
/// all-zero channel per invisible one, and `1 − max` as the background.
pub fn encode_heatmaps(landmarks: &[[f64; 2]], visible: &[bool], size: usize, sigma: f64) -> Result<Tensor<f32>> {
    if size < 8 || !(sigma > 0.0) {
        return Err(Error::Config(format!("heatmap size {size} / sigma {sigma} out of range")));
    }
    if landmarks.len() != visible.len() {
        return Err(Error::Shape(format!(
            "{} landmarks but {} visibility flags",
            landmarks.len(),
            visible.len()
        )));
    }
    let k = landmarks.len();
    let plane = size * size;
    let mut out = Tensor::zeros(&[k + 1, size, size]);
    let data = out.data_mut();
    let limit = (size - 1) as f64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (i, (l, &v)) in landmarks.iter().zip(visible).enumerate() {
        if !v {
            continue;
        }
        if !(0.0..=limit).contains(&l[0]) || !(0.0..=limit).contains(&l[1]) {
            return Err(Error::Input(format!(
                "landmark {i} at ({}, {}) is marked visible but lies outside a {size}×{size} map",
                l[0], l[1]
            )));
        }
        let ch = &mut data[i * plane..(i + 1) * plane];
        for y in 0..size {
            let dy = y as f64 - l[1];
            for x in 0..size {
                let dx = x as f64 - l[0];
                ch[y * size + x] = (-(dx * dx + dy * dy) * inv).exp() as f32;
            }
        }
    }
    for p in 0..plane {
        let m = (0..k).map(|i| data[i * plane + p]).fold(0.0f32, f32::max);
        data[k * plane + p] = (1.0 - m).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// One decoded keypoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decoded {
    pub point: [f64; 2],
    pub confidence: f64,
    pub visible: bool,
}

/// Decodes the keypoint channels of a `(K+1)×S×S` (or `K×S×S`, with
/// `keypoints = K`) stack: argmax, then a quarter-pixel step toward the larger
/// neighbour on each axis.
pub fn decode_heatmaps(stack: &Tensor<f32>, keypoints: usize) -> Result<Vec<Decoded>> {
    let s = stack.shape();
    if s.len() != 3 || s[0] < keypoints {
        return Err(Error::Shape(format!("cannot decode {keypoints} keypoints from {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let plane = h * w;
    let mut out = Vec::with_capacity(keypoints);
    for i in 0..keypoints {
        let ch = &stack.data()[i * plane..(i + 1) * plane];
        let (mut best, mut at) = (f32::NEG_INFINITY, 0);
        for (j, &v) in ch.iter().enumerate() {
            if v > best {
                best = v;
                at = j;
            }
        }
        let (y, x) = (at / w, at % w);
        // neighbours beyond the border count as zero
        let get = |yy: Option<usize>, xx: Option<usize>| match (yy, xx) {
            (Some(yy), Some(xx)) if yy < h && xx < w => ch[yy * w + xx],
            _ => 0.0,
        };
        let step = |lo: f32, hi: f32| match hi.partial_cmp(&lo) {
            Some(std::cmp::Ordering::Greater) => 0.25,
            Some(std::cmp::Ordering::Less) => -0.25,
            _ => 0.0,
        };
        let dx = step(get(Some(y), x.checked_sub(1)), get(Some(y), Some(x + 1)));
        let dy = step(get(y.checked_sub(1), Some(x)), get(Some(y + 1), Some(x)));
        let confidence = best as f64;
        out.push(Decoded {
            point: [x as f64 + dx, y as f64 + dy],
            confidence,
            visible: confidence >= VISIBILITY_THRESHOLD,
        });
    }
    Ok(out)
}

/// Continuous division of every coordinate by `factor`.
pub fn downsample_landmarks(landmarks: &[[f64; 2]], factor: f64) -> Result<Vec<[f64; 2]>> {
    if !(factor >= 1.0) {
        return Err(Error::Config(format!("downsample factor must be ≥ 1, got {factor}")));
    }
    Ok(landmarks.iter().map(|p| [p[0] / factor, p[1] / factor]).collect())
}
