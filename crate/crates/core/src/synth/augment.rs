//! Random similarity warps applied jointly to image, landmarks and box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FaceSample;
use crate::tensor::Tensor;

/// A similarity about the image centre: scale, rotation (degrees), translation (pixels).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarpParams {
    pub scale: f64,
    pub rotation_deg: f64,
    pub translate: [f64; 2],
}

/// Row-major 2×3 affine map `p ↦ A·p + b`.
pub type Affine = [[f64; 3]; 2];

pub fn apply_affine(m: &Affine, p: [f64; 2]) -> [f64; 2] {
    [
        m[0][0] * p[0] + m[0][1] * p[1] + m[0][2],
        m[1][0] * p[0] + m[1][1] * p[1] + m[1][2],
    ]
}

pub fn invert_affine(m: &Affine) -> Option<Affine> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-12 {
        return None;
    }
    let (a, b, c, d) = (m[1][1] / det, -m[0][1] / det, -m[1][0] / det, m[0][0] / det);
    Some([
        [a, b, -(a * m[0][2] + b * m[1][2])],
        [c, d, -(c * m[0][2] + d * m[1][2])],
    ])
}

impl WarpParams {
    pub fn identity() -> Self {
        WarpParams {
            scale: 1.0,
            rotation_deg: 0.0,
            translate: [0.0, 0.0],
        }
    }

    /// Scale in (0.9, 1.1), rotation in (−30°, 30°), translation up to
    /// `20·side/128` pixels per axis.
    pub fn sample(rng: &mut ChaCha8Rng, side: usize) -> Self {
        let t = 20.0 * side as f64 / 128.0;
        WarpParams {
            scale: rng.random_range(0.9..1.1),
            rotation_deg: rng.random_range(-30.0..30.0),
            translate: [rng.random_range(-t..=t), rng.random_range(-t..=t)],
        }
    }

    pub fn matrix(&self, side: usize) -> Affine {
        let c = (side as f64 - 1.0) / 2.0;
        let (s, co) = self.rotation_deg.to_radians().sin_cos();
        let (a, b) = (self.scale * co, -self.scale * s);
        let (cc, d) = (self.scale * s, self.scale * co);
        [
            [a, b, c - (a * c + b * c) + self.translate[0]],
            [cc, d, c - (cc * c + d * c) + self.translate[1]],
        ]
    }
}

/// Bilinear sample of a `C×H×W` image at `(x, y)` with edge clamping.
pub fn sample_bilinear(img: &Tensor<f32>, ch: usize, x: f64, y: f64) -> f32 {
    let s = img.shape();
    let (h, w) = (s[1], s[2]);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
    let d = &img.data()[ch * h * w..(ch + 1) * h * w];
    let top = d[y0 * w + x0] * (1.0 - fx) + d[y0 * w + x1] * fx;
    let bot = d[y1 * w + x0] * (1.0 - fx) + d[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Resamples a `C×H×W` image so that output pixel `q` reads input `m⁻¹·q`,
/// producing an `out_h×out_w` raster.
pub fn warp_image(img: &Tensor<f32>, inverse: &Affine, out_h: usize, out_w: usize) -> Tensor<f32> {
    let c = img.shape()[0];
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    let od = out.data_mut();
    for y in 0..out_h {
        for x in 0..out_w {
            let p = apply_affine(inverse, [x as f64, y as f64]);
            for ch in 0..c {
                od[(ch * out_h + y) * out_w + x] = sample_bilinear(img, ch, p[0], p[1]);
            }
        }
    }
    out
}

/// Applies `params` to every part of the sample. Landmarks leaving the frame
/// become invisible; the box keeps its aspect and moves with its centre.
pub fn warp_sample(sample: &FaceSample, params: &WarpParams) -> FaceSample {
    let side = sample.image.shape()[2];
    if *params == WarpParams::identity() {
        return sample.clone();
    }
    let m = params.matrix(side);
    let inv = invert_affine(&m).expect("similarity with positive scale");
    let image = warp_image(&sample.image, &inv, sample.image.shape()[1], side);
    let limit = side as f64 - 1.0;
    let landmarks: Vec<[f64; 2]> = sample.landmarks.iter().map(|&p| apply_affine(&m, p)).collect();
    let visible = landmarks
        .iter()
        .zip(&sample.visible)
        .map(|(p, &v)| v && (0.0..=limit).contains(&p[0]) && (0.0..=limit).contains(&p[1]))
        .collect();
    let [bx, by, bw, bh] = sample.bbox;
    let c = apply_affine(&m, [bx + bw / 2.0, by + bh / 2.0]);
    let (w, h) = (bw * params.scale, bh * params.scale);
    // keep every visible landmark inside the box
    let (mut x0, mut y0, mut x1, mut y1) = (c[0] - w / 2.0, c[1] - h / 2.0, c[0] + w / 2.0, c[1] + h / 2.0);
    for (p, &v) in landmarks.iter().zip(&visible) {
        if v {
            x0 = x0.min(p[0]);
            y0 = y0.min(p[1]);
            x1 = x1.max(p[0]);
            y1 = y1.max(p[1]);
        }
    }
    FaceSample {
        image,
        landmarks,
        visible,
        bbox: [x0, y0, x1 - x0, y1 - y0],
    }
}

/// Random warp drawn from `seed`.
pub fn augment(sample: &FaceSample, seed: u64) -> FaceSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = WarpParams::sample(&mut rng, sample.image.shape()[2]);
    warp_sample(sample, &params)
}
