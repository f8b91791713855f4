//! Procedural face renderer with exact landmark geometry.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::FaceSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaceConfig {
    /// Side of the square HR image.
    pub size: usize,
    /// 5, 19 or 68.
    pub keypoints: usize,
    /// Largest in-plane rotation, degrees.
    pub max_rotation_deg: f64,
    /// Face half-width as a fraction of the side, `[lo, hi]`.
    pub face_scale: [f64; 2],
    /// Largest centre offset as a fraction of the side.
    pub max_shift: f64,
}

impl Default for FaceConfig {
    fn default() -> Self {
        FaceConfig {
            size: 64,
            keypoints: 5,
            max_rotation_deg: 20.0,
            face_scale: [0.34, 0.4],
            max_shift: 0.05,
        }
    }
}

impl FaceConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.keypoints, 5 | 19 | 68) {
            return Err(Error::Config(format!("{} keypoints not supported (5, 19 or 68)", self.keypoints)));
        }
        if self.size < 16 || !(self.face_scale[0] > 0.0 && self.face_scale[0] <= self.face_scale[1]) {
            return Err(Error::Config(format!("invalid face config {self:?}")));
        }
        Ok(())
    }
}

/// Randomised face geometry in face-local units: the head ellipse has unit
/// semi-axes, x points right and y down.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    eye_dx: f64,
    eye_y: f64,
    eye_rx: f64,
    eye_ry: f64,
    brow_dy: f64,
    nose_y: f64,
    mouth_y: f64,
    mouth_hw: f64,
    mouth_hh: f64,
}

impl Geometry {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        Geometry {
            eye_dx: rng.random_range(0.34..0.44),
            eye_y: rng.random_range(-0.22..-0.1),
            eye_rx: rng.random_range(0.13..0.17),
            eye_ry: rng.random_range(0.06..0.09),
            brow_dy: rng.random_range(0.15..0.2),
            nose_y: rng.random_range(0.14..0.24),
            mouth_y: rng.random_range(0.44..0.56),
            mouth_hw: rng.random_range(0.24..0.34),
            mouth_hh: rng.random_range(0.05..0.08),
        }
    }

    /// Centre of every sampling range.
    fn mean() -> Self {
        Geometry {
            eye_dx: 0.39,
            eye_y: -0.16,
            eye_rx: 0.15,
            eye_ry: 0.075,
            brow_dy: 0.175,
            nose_y: 0.19,
            mouth_y: 0.5,
            mouth_hw: 0.29,
            mouth_hh: 0.065,
        }
    }

    /// Landmarks in face-local units, in the conventional order for `k`.
    fn landmarks(&self, k: usize) -> Vec<[f64; 2]> {
        let g = self;
        let eye = |side: f64| [side * g.eye_dx, g.eye_y];
        let ell = |c: [f64; 2], rx: f64, ry: f64, t: f64| [c[0] + rx * t.cos(), c[1] + ry * t.sin()];
        let mouth_c = [0.0, g.mouth_y];
        match k {
            5 => vec![
                eye(-1.0),
                eye(1.0),
                [0.0, g.nose_y],
                [-g.mouth_hw, g.mouth_y],
                [g.mouth_hw, g.mouth_y],
            ],
            19 => {
                let by = g.eye_y - g.brow_dy;
                let brow = |side: f64, t: f64| [side * (g.eye_dx + t * 0.18), by - 0.03 * (1.0 - t * t)];
                let mut v = vec![brow(-1.0, 1.0), brow(-1.0, 0.0), brow(-1.0, -1.0)];
                v.extend([brow(1.0, -1.0), brow(1.0, 0.0), brow(1.0, 1.0)]);
                for side in [-1.0, 1.0] {
                    let c = eye(side);
                    let outer = [c[0] + side * g.eye_rx, c[1]];
                    let inner = [c[0] - side * g.eye_rx, c[1]];
                    if side < 0.0 {
                        v.extend([outer, c, inner]);
                    } else {
                        v.extend([inner, c, outer]);
                    }
                }
                v.extend([[-0.11, g.nose_y + 0.04], [0.0, g.nose_y], [0.11, g.nose_y + 0.04]]);
                v.extend([[-g.mouth_hw, g.mouth_y], mouth_c, [g.mouth_hw, g.mouth_y]]);
                v.push([0.0, 1.0]);
                v
            }
            _ => {
                let pi = std::f64::consts::PI;
                // jaw: from the left ear level through the chin to the right
                let mut v: Vec<[f64; 2]> = (0..17).map(|i| ell([0.0, 0.0], 1.0, 1.0, pi - i as f64 * pi / 16.0)).collect();
                let by = g.eye_y - g.brow_dy;
                for side in [-1.0, 1.0] {
                    for i in 0..5 {
                        let t = if side < 0.0 { 1.0 - i as f64 * 0.5 } else { -1.0 + i as f64 * 0.5 };
                        v.push([side * (g.eye_dx + t * 0.18), by - 0.03 * (1.0 - t * t)]);
                    }
                }
                for i in 0..4 {
                    v.push([0.0, g.eye_y + (g.nose_y - 0.04 - g.eye_y) * i as f64 / 3.0]);
                }
                for i in 0..5 {
                    v.push([-0.12 + 0.06 * i as f64, g.nose_y + 0.04]);
                }
                for side in [-1.0, 1.0] {
                    let c = eye(side);
                    // clockwise from the outer corner of the left eye / inner corner of the right
                    for i in 0..6 {
                        v.push(ell(c, g.eye_rx, g.eye_ry, pi + i as f64 * pi / 3.0));
                    }
                }
                for i in 0..12 {
                    v.push(ell(mouth_c, g.mouth_hw, g.mouth_hh, pi + i as f64 * pi / 6.0));
                }
                for i in 0..8 {
                    v.push(ell(mouth_c, g.mouth_hw * 0.7, g.mouth_hh * 0.4, pi + i as f64 * pi / 4.0));
                }
                v
            }
        }
    }
}

/// Face pose: centre, semi-axes in pixels, rotation in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub center: [f64; 2],
    pub radii: [f64; 2],
    pub rotation: f64,
}

impl Pose {
    /// Face-local point to image pixels.
    pub fn to_image(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        let (x, y) = (p[0] * self.radii[0], p[1] * self.radii[1]);
        [self.center[0] + c * x - s * y, self.center[1] + s * x + c * y]
    }

    /// Image pixel to face-local coordinates.
    pub fn to_local(&self, q: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        let (dx, dy) = (q[0] - self.center[0], q[1] - self.center[1]);
        [(c * dx + s * dy) / self.radii[0], (-s * dx + c * dy) / self.radii[1]]
    }

    /// Axis-aligned box `(x, y, w, h)` of the rotated head ellipse.
    pub fn bbox(&self) -> [f64; 4] {
        let (s, c) = self.rotation.sin_cos();
        let [a, b] = self.radii;
        let hw = (a * a * c * c + b * b * s * s).sqrt();
        let hh = (a * a * s * s + b * b * c * c).sqrt();
        [self.center[0] - hw, self.center[1] - hh, 2.0 * hw, 2.0 * hh]
    }
}

fn smooth_edge(signed: f64) -> f64 {
    // signed distance (pixels, positive inside) to coverage over a 1-px ramp
    (signed + 0.5).clamp(0.0, 1.0)
}

/// Coverage of an ellipse in face-local units, given the pixel scale of one local unit.
fn ellipse_cov(p: [f64; 2], c: [f64; 2], rx: f64, ry: f64, px: f64) -> f64 {
    let (u, v) = ((p[0] - c[0]) / rx, (p[1] - c[1]) / ry);
    let d = (u * u + v * v).sqrt();
    smooth_edge((1.0 - d) * rx.min(ry) * px)
}

fn blend(dst: &mut [f64; 3], src: [f64; 3], alpha: f64) {
    for i in 0..3 {
        dst[i] += alpha * (src[i] - dst[i]);
    }
}

fn color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

/// Renders the face for `seed`. Landmarks are the generative coordinates; those
/// outside the frame are marked invisible.
pub fn generate_face(seed: u64, cfg: &FaceConfig) -> Result<FaceSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = cfg.size as f64;
    let geo = Geometry::sample(&mut rng);
    let rx = side * rng.random_range(cfg.face_scale[0]..=cfg.face_scale[1]);
    let ry = rx * rng.random_range(1.15..1.3);
    let shift = cfg.max_shift * side;
    let center = [
        (side - 1.0) / 2.0 + rng.random_range(-shift..=shift),
        (side - 1.0) / 2.0 + rng.random_range(-shift..=shift),
    ];
    let max_rot = cfg.max_rotation_deg.to_radians();
    let rotation = if max_rot > 0.0 { rng.random_range(-max_rot..=max_rot) } else { 0.0 };
    let pose = Pose {
        center,
        radii: [rx, ry],
        rotation,
    };

    let bg_a = color(&mut rng, -0.9, 0.6);
    let bg_b = color(&mut rng, -0.9, 0.6);
    let bg_angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let tone = rng.random_range(-0.3..0.7);
    let skin = [tone + 0.15, tone, tone - rng.random_range(0.05..0.2)];
    let feature = color(&mut rng, -0.95, -0.6);
    let lips = [rng.random_range(-0.2..0.3), -0.6, -0.55];
    let light = rng.random_range(-0.25..0.25);
    let px = rx.min(ry);

    let n = cfg.size;
    let mut img = Tensor::<f32>::zeros(&[3, n, n]);
    let (bs, bc) = bg_angle.sin_cos();
    for yy in 0..n {
        for xx in 0..n {
            let q = [xx as f64, yy as f64];
            let t = ((q[0] / side - 0.5) * bc + (q[1] / side - 0.5) * bs + 0.5).clamp(0.0, 1.0);
            let mut c = [0.0; 3];
            for i in 0..3 {
                c[i] = bg_a[i] + t * (bg_b[i] - bg_a[i]);
            }
            let p = pose.to_local(q);
            let head = ellipse_cov(p, [0.0, 0.0], 1.0, 1.0, px);
            if head > 0.0 {
                let shade = light * p[0];
                blend(&mut c, [skin[0] + shade, skin[1] + shade, skin[2] + shade], head);
                let by = geo.eye_y - geo.brow_dy;
                for side in [-1.0, 1.0] {
                    let brow = ellipse_cov(p, [side * geo.eye_dx, by], 0.2, 0.035, px);
                    blend(&mut c, feature, brow * head);
                    let ec = [side * geo.eye_dx, geo.eye_y];
                    let sclera = ellipse_cov(p, ec, geo.eye_rx, geo.eye_ry, px);
                    blend(&mut c, [0.85, 0.85, 0.85], sclera * head);
                    let iris = ellipse_cov(p, ec, geo.eye_ry * 0.95, geo.eye_ry * 0.95, px);
                    blend(&mut c, feature, iris * head);
                }
                let nose = ellipse_cov(p, [0.0, geo.nose_y], 0.09, 0.05, px);
                blend(&mut c, [skin[0] - 0.55, skin[1] - 0.6, skin[2] - 0.6], nose * head);
                let mouth = ellipse_cov(p, [0.0, geo.mouth_y], geo.mouth_hw, geo.mouth_hh, px);
                blend(&mut c, lips, mouth * head);
            }
            for ch in 0..3 {
                img.data_mut()[(ch * n + yy) * n + xx] = c[ch].clamp(-1.0, 1.0) as f32;
            }
        }
    }

    let landmarks: Vec<[f64; 2]> = geo.landmarks(cfg.keypoints).into_iter().map(|p| pose.to_image(p)).collect();
    let limit = side - 1.0;
    let visible = landmarks
        .iter()
        .map(|l| (0.0..=limit).contains(&l[0]) && (0.0..=limit).contains(&l[1]))
        .collect();
    Ok(FaceSample {
        image: img,
        landmarks,
        visible,
        bbox: pose.bbox(),
    })
}

/// Landmarks of the average face geometry in the unit square spanned by the
/// head ellipse's bounding box (x right, y down).
pub fn canonical_landmarks(keypoints: usize) -> Result<Vec<[f64; 2]>> {
    if !matches!(keypoints, 5 | 19 | 68) {
        return Err(Error::Config(format!("{keypoints} keypoints not supported (5, 19 or 68)")));
    }
    Ok(Geometry::mean()
        .landmarks(keypoints)
        .into_iter()
        .map(|p| [(p[0] + 1.0) / 2.0, (p[1] + 1.0) / 2.0])
        .collect())
}

/// Indices of the two eye centres (or, for 68 points, the first point of each
/// eye contour) used for inter-pupil normalisation.
pub fn pupil_indices(keypoints: usize) -> Option<(usize, usize)> {
    match keypoints {
        5 => Some((0, 1)),
        19 => Some((7, 10)),
        _ => None,
    }
}

/// Eye centres of a landmark set, averaging contours when no centre point exists.
pub fn pupils(landmarks: &[[f64; 2]]) -> Option<([f64; 2], [f64; 2])> {
    if let Some((l, r)) = pupil_indices(landmarks.len()) {
        return Some((landmarks[l], landmarks[r]));
    }
    if landmarks.len() == 68 {
        let mean = |r: std::ops::Range<usize>| {
            let n = r.len() as f64;
            let s = landmarks[r].iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
            [s[0] / n, s[1] / n]
        };
        return Some((mean(36..42), mean(42..48)));
    }
    None
}
