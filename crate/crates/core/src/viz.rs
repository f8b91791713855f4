//! Keypoint overlays for visual inspection.

use image::{imageops, Rgb, RgbImage};

use crate::error::Result;
use crate::synth::io::tensor_to_rgb;
use crate::tensor::Tensor;

/// One colour per keypoint index, cycling for K > 5.
pub const PALETTE: [[u8; 3]; 5] = [[230, 25, 75], [60, 180, 75], [0, 130, 200], [255, 225, 25], [145, 30, 180]];

/// Overlays are upscaled (nearest neighbour) to at least this side.
pub const MIN_OVERLAY_SIDE: usize = 128;

/// Draws a one-pixel cross per visible landmark on an upscaled copy of `image`.
/// Landmarks are in `image` pixel coordinates; cross arms grow with the output size.
pub fn draw_landmarks(image: &Tensor<f32>, landmarks: &[[f64; 2]], visible: &[bool]) -> Result<RgbImage> {
    let base = tensor_to_rgb(image)?;
    let side = base.width().max(base.height()) as usize;
    let scale = MIN_OVERLAY_SIDE.div_ceil(side).max(1) as u32;
    let mut out = imageops::resize(
        &base,
        base.width() * scale,
        base.height() * scale,
        imageops::FilterType::Nearest,
    );
    let arm = (out.width().max(out.height()) / 32).max(2) as i64;
    let s = scale as f64;
    for (k, (p, &v)) in landmarks.iter().zip(visible).enumerate() {
        if !v {
            continue;
        }
        // pixel centres sit at integer coordinates in both rasters
        let cx = ((p[0] + 0.5) * s - 0.5).round() as i64;
        let cy = ((p[1] + 0.5) * s - 0.5).round() as i64;
        let c = Rgb(PALETTE[k % PALETTE.len()]);
        for d in -arm..=arm {
            put(&mut out, cx + d, cy, c);
            put(&mut out, cx, cy + d, c);
        }
    }
    Ok(out)
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crosses_use_the_palette_and_skip_invisible_points() {
        let img = Tensor::from_fn(&[3, 16, 16], |_| -1.0f32);
        let out = draw_landmarks(&img, &[[4.0, 4.0], [10.0, 10.0]], &[true, false]).unwrap();
        assert_eq!(out.width(), 128);
        // centre of pixel (4, 4) at scale 8
        assert_eq!(out.get_pixel(36, 36).0, PALETTE[0]);
        assert_eq!(out.get_pixel(84, 84).0, [0, 0, 0]);
    }
}
