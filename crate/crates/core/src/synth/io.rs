//! Dataset directories: PNG images plus a line-oriented `annotations.txt`.
//!
//! Each annotation line is
//! `filename x1 y1 v1 … xK yK vK bx by bw bh`, with invisible points written
//! as `-1 -1 0`. Unlabelled splits carry images only.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::{FaceSample, SynthData};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ANNOTATIONS: &str = "annotations.txt";

fn to_byte(v: f32) -> u8 {
    ((v as f64 + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

fn from_byte(b: u8) -> f32 {
    (b as f64 / 127.5 - 1.0) as f32
}

/// `3×H×W` in `[−1, 1]` to an 8-bit RGB image.
pub fn tensor_to_rgb(t: &Tensor<f32>) -> Result<RgbImage> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Shape(format!("expected 3×H×W image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let d = t.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([to_byte(d[i]), to_byte(d[h * w + i]), to_byte(d[2 * h * w + i])])
    }))
}

pub fn rgb_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(&[3, h, w]);
    let d = t.data_mut();
    for (x, y, px) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            d[c * h * w + i] = from_byte(px.0[c]);
        }
    }
    t
}

pub fn save_png(path: &Path, t: &Tensor<f32>) -> Result<()> {
    tensor_to_rgb(t)?.save(path)?;
    Ok(())
}

pub fn load_png(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)?.to_rgb8();
    Ok(rgb_to_tensor(&img))
}

/// Loads any decodable image and resizes it to `side×side` if needed.
pub fn load_image_resized(path: &Path, side: usize) -> Result<Tensor<f32>> {
    let mut img = image::open(path)?.to_rgb8();
    if img.width() as usize != side || img.height() as usize != side {
        img = image::imageops::resize(&img, side as u32, side as u32, image::imageops::FilterType::Triangle);
    }
    Ok(rgb_to_tensor(&img))
}

fn fmt_num(v: f64) -> String {
    // shortest round-trip representation keeps files byte-stable
    format!("{v}")
}

/// One annotation line for `sample` stored as `filename`.
pub fn annotation_line(filename: &str, s: &FaceSample) -> String {
    let mut line = filename.to_string();
    for (p, &v) in s.landmarks.iter().zip(&s.visible) {
        if v {
            let _ = write!(line, " {} {} 1", fmt_num(p[0]), fmt_num(p[1]));
        } else {
            line.push_str(" -1 -1 0");
        }
    }
    for b in s.bbox {
        let _ = write!(line, " {}", fmt_num(b));
    }
    line
}

/// Parsed annotation: filename, landmarks, visibility, box.
pub type Annotation = (String, Vec<[f64; 2]>, Vec<bool>, [f64; 4]);

pub fn parse_annotation(line: &str) -> Result<Annotation> {
    let mut parts = line.split_whitespace();
    let name = parts
        .next()
        .ok_or_else(|| Error::Input("empty annotation line".into()))?
        .to_string();
    let nums: Vec<f64> = parts
        .map(|p| p.parse::<f64>().map_err(|e| Error::Input(format!("{name}: bad number {p:?}: {e}"))))
        .collect::<Result<_>>()?;
    if nums.len() < 4 || (nums.len() - 4) % 3 != 0 {
        return Err(Error::Input(format!("{name}: {} values is not 3·K + 4", nums.len())));
    }
    let k = (nums.len() - 4) / 3;
    let mut landmarks = Vec::with_capacity(k);
    let mut visible = Vec::with_capacity(k);
    for i in 0..k {
        let (x, y, v) = (nums[3 * i], nums[3 * i + 1], nums[3 * i + 2]);
        landmarks.push([x, y]);
        visible.push(v != 0.0);
    }
    let b = &nums[3 * k..];
    Ok((name, landmarks, visible, [b[0], b[1], b[2], b[3]]))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes a labelled split: `00000.png …` and `annotations.txt`.
pub fn export_split(dir: &Path, samples: &[FaceSample]) -> Result<()> {
    create_dir(dir)?;
    let mut text = String::new();
    for (i, s) in samples.iter().enumerate() {
        let name = format!("{i:05}.png");
        save_png(&dir.join(&name), &s.image)?;
        text.push_str(&annotation_line(&name, s));
        text.push('\n');
    }
    let path = dir.join(ANNOTATIONS);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Writes an unlabelled split (images only).
pub fn export_images(dir: &Path, images: &[Tensor<f32>]) -> Result<()> {
    create_dir(dir)?;
    for (i, t) in images.iter().enumerate() {
        save_png(&dir.join(format!("{i:05}.png")), t)?;
    }
    Ok(())
}

/// Reads a labelled split written by [`export_split`] (or by hand in the same format).
pub fn load_split(dir: &Path) -> Result<Vec<FaceSample>> {
    let path = dir.join(ANNOTATIONS);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (name, landmarks, visible, bbox) = parse_annotation(l)?;
            let image = load_png(&dir.join(&name))?;
            Ok(FaceSample {
                image,
                landmarks,
                visible,
                bbox,
            })
        })
        .collect()
}

/// Sorted `*.png` paths of a directory.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}

/// Reads every PNG of an unlabelled split.
pub fn load_images(dir: &Path) -> Result<Vec<Tensor<f32>>> {
    list_pngs(dir)?.iter().map(|p| load_png(p)).collect()
}

/// Split directories of an exported benchmark.
pub const SPLITS: [&str; 5] = ["train", "val", "test", "real_lr", "test_real_lr"];

/// Writes every split of `data` under `root` (see [`SPLITS`]).
pub fn export_dataset(root: &Path, data: &SynthData) -> Result<()> {
    export_split(&root.join("train"), &data.train)?;
    export_split(&root.join("val"), &data.val)?;
    export_split(&root.join("test"), &data.test)?;
    export_images(&root.join("real_lr"), &data.real_lr)?;
    export_split(&root.join("test_real_lr"), &data.test_real_lr)
}

/// Reads a benchmark written by [`export_dataset`]. Missing splits come back empty.
pub fn load_dataset(root: &Path) -> Result<SynthData> {
    let labelled = |name: &str| {
        let dir = root.join(name);
        if dir.join(ANNOTATIONS).exists() {
            load_split(&dir)
        } else {
            Ok(Vec::new())
        }
    };
    let real = root.join("real_lr");
    Ok(SynthData {
        train: labelled("train")?,
        val: labelled("val")?,
        test: labelled("test")?,
        real_lr: if real.is_dir() { load_images(&real)? } else { Vec::new() },
        test_real_lr: labelled("test_real_lr")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_face, FaceConfig};

    #[test]
    fn annotation_roundtrip_with_invisible_point() {
        let mut s = generate_face(3, &FaceConfig::default()).unwrap();
        s.visible[2] = false;
        let line = annotation_line("a.png", &s);
        assert!(line.contains(" -1 -1 0 "));
        let (name, l, v, b) = parse_annotation(&line).unwrap();
        assert_eq!(name, "a.png");
        assert_eq!(v, s.visible);
        assert_eq!(b, s.bbox);
        assert_eq!(l[0], s.landmarks[0]);
        assert_eq!(l[2], [-1.0, -1.0]);
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(parse_annotation("").is_err());
        assert!(parse_annotation("x.png 1 2").is_err());
        assert!(parse_annotation("x.png 1 2 1 0 0 1 one").is_err());
    }

    #[test]
    fn split_roundtrip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let s: Vec<_> = (0..3).map(|i| generate_face(i, &FaceConfig::default()).unwrap()).collect();
        export_split(dir.path(), &s).unwrap();
        let back = load_split(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[1].landmarks, s[1].landmarks);
        // 8-bit quantisation bounds the pixel error
        let err = back[1].image.zip_map(&s[1].image, |a, b| (a - b).abs()).unwrap().max_abs();
        assert!(err <= 1.0 / 127.5 + 1e-6);
    }

    #[test]
    fn byte_mapping_is_stable() {
        for b in 0..=255u8 {
            assert_eq!(to_byte(from_byte(b)), b);
        }
    }
}
