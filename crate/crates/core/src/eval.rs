//! Landmark metrics (NRMSE, CED, AUC) and canonical affine alignment.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::networks::UNet;
use crate::synth::{apply_affine, canonical_landmarks, decode_heatmaps, invert_affine, pupils, warp_image, Affine, Decoded, FaceSample};
use crate::tensor::Tensor;

pub const SCHEMA_LINE: &str = "# schema=1";
pub const SUMMARY_HEADER: [&str; 6] = ["setting", "nrmse_mean", "nrmse_std", "auc_0.07", "auc_0.08", "excluded"];
const AUC_STEP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalizer {
    /// `√(w·h)` of the ground-truth box.
    #[default]
    Bbox,
    /// Distance between the ground-truth eye centres.
    InterPupil,
}

impl FromStr for Normalizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bbox" => Ok(Normalizer::Bbox),
            "interpupil" | "inter-pupil" => Ok(Normalizer::InterPupil),
            _ => Err(Error::Config(format!("unknown normalizer {s:?} (bbox or interpupil)"))),
        }
    }
}

impl fmt::Display for Normalizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalizer::Bbox => "bbox",
            Normalizer::InterPupil => "interpupil",
        })
    }
}

/// Normalised error of one sample. `error` is `None` when the sample had no
/// visible ground-truth point and is excluded from the statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorRecord {
    pub error: Option<f64>,
    pub normalizer: Normalizer,
    pub visible: usize,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// The normalising length of a ground-truth annotation.
pub fn normalizer_length(gt: &[[f64; 2]], bbox: [f64; 4], normalizer: Normalizer) -> Result<f64> {
    let d = match normalizer {
        Normalizer::Bbox => (bbox[2] * bbox[3]).max(0.0).sqrt(),
        Normalizer::InterPupil => {
            let (l, r) = pupils(gt)
                .ok_or_else(|| Error::Input(format!("no eye centres defined for {} keypoints", gt.len())))?;
            dist(l, r)
        }
    };
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::Input(format!("{normalizer} normalizer is {d}")));
    }
    Ok(d)
}

/// Mean Euclidean error over visible points divided by the normaliser.
pub fn nrmse(pred: &[[f64; 2]], gt: &[[f64; 2]], visible: &[bool], bbox: [f64; 4], normalizer: Normalizer) -> Result<ErrorRecord> {
    if pred.len() != gt.len() || visible.len() != gt.len() {
        return Err(Error::Shape(format!(
            "{} predictions, {} ground-truth points, {} visibility flags",
            pred.len(),
            gt.len(),
            visible.len()
        )));
    }
    let norm = normalizer_length(gt, bbox, normalizer)?;
    let errs: Vec<f64> = pred
        .iter()
        .zip(gt)
        .zip(visible)
        .filter(|(_, &v)| v)
        .map(|((p, g), _)| dist(*p, *g))
        .collect();
    let error = if errs.is_empty() {
        None
    } else {
        Some(errs.iter().sum::<f64>() / errs.len() as f64 / norm)
    };
    Ok(ErrorRecord {
        error,
        normalizer,
        visible: errs.len(),
    })
}

/// Included errors, sorted ascending.
pub fn included_errors(records: &[ErrorRecord]) -> Vec<f64> {
    let mut e: Vec<f64> = records.iter().filter_map(|r| r.error).collect();
    e.sort_by(f64::total_cmp);
    e
}

fn fraction_at_most(sorted: &[f64], t: f64) -> f64 {
    sorted.partition_point(|&e| e <= t) as f64 / sorted.len() as f64
}

/// Fraction of samples with error `≤ t` for each `t` of `grid`.
pub fn ced_curve(errors: &[f64], grid: &[f64]) -> Result<Vec<[f64; 2]>> {
    if errors.is_empty() {
        return Err(Error::Input("no errors to accumulate".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(grid.iter().map(|&t| [t, fraction_at_most(&sorted, t)]).collect())
}

/// `0, 0.001, …, 0.1`.
pub fn default_ced_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 1000.0).collect()
}

/// Area under the CED on `[0, threshold]`, divided by `threshold`, as a percentage.
/// Trapezoidal rule on a grid of step at most 0.001.
pub fn auc_at(errors: &[f64], threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(Error::Input(format!("AUC threshold must be positive, got {threshold}")));
    }
    if errors.is_empty() {
        return Ok(0.0);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = (threshold / AUC_STEP - 1e-9).ceil().max(1.0) as usize;
    let h = threshold / n as f64;
    let ys: Vec<f64> = (0..=n).map(|j| fraction_at_most(&sorted, threshold * j as f64 / n as f64)).collect();
    let area: f64 = ys.windows(2).map(|w| (w[0] + w[1]) * h / 2.0).sum();
    Ok(100.0 * area / threshold)
}

/// Neumaier-compensated sum.
fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

/// One row of a metrics table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSummary {
    pub setting: String,
    pub nrmse_mean: f64,
    /// Population standard deviation.
    pub nrmse_std: f64,
    pub auc_007: f64,
    pub auc_008: f64,
    pub excluded: usize,
}

impl MetricSummary {
    pub fn from_records(setting: &str, records: &[ErrorRecord]) -> Result<Self> {
        let errs = included_errors(records);
        if errs.is_empty() {
            return Err(Error::Input(format!("{setting}: every sample was excluded")));
        }
        let n = errs.len() as f64;
        let mean = compensated_sum(errs.iter().copied()) / n;
        let var = compensated_sum(errs.iter().map(|e| (e - mean) * (e - mean))) / n;
        Ok(MetricSummary {
            setting: setting.to_string(),
            nrmse_mean: mean,
            nrmse_std: var.sqrt(),
            auc_007: auc_at(&errs, 0.07)?,
            auc_008: auc_at(&errs, 0.08)?,
            excluded: records.len() - errs.len(),
        })
    }

    fn record(&self) -> [String; 6] {
        [
            self.setting.clone(),
            self.nrmse_mean.to_string(),
            self.nrmse_std.to_string(),
            self.auc_007.to_string(),
            self.auc_008.to_string(),
            self.excluded.to_string(),
        ]
    }
}

/// CSV text with the schema comment line and the fixed header.
pub fn summaries_to_csv(rows: &[MetricSummary]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    let body = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
    Ok(format!("{SCHEMA_LINE}\n{}", String::from_utf8_lossy(&body)))
}

pub fn summaries_from_csv(text: &str) -> Result<Vec<MetricSummary>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != SUMMARY_HEADER {
        return Err(Error::Input(format!("unexpected metrics header {header:?}")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Input(format!("bad number {s:?}: {e}")));
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(MetricSummary {
                setting: rec[0].to_string(),
                nrmse_mean: num(&rec[1])?,
                nrmse_std: num(&rec[2])?,
                auc_007: num(&rec[3])?,
                auc_008: num(&rec[4])?,
                excluded: rec[5].parse().map_err(|e| Error::Input(format!("bad count {:?}: {e}", &rec[5])))?,
            })
        })
        .collect()
}

pub fn write_summaries(path: &Path, rows: &[MetricSummary]) -> Result<()> {
    write_atomic(path, summaries_to_csv(rows)?.as_bytes())
}

pub fn read_summaries(path: &Path) -> Result<Vec<MetricSummary>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    summaries_from_csv(&text)
}

/// CED points as `threshold,fraction` CSV.
pub fn ced_to_csv(curve: &[[f64; 2]]) -> String {
    let mut s = format!("{SCHEMA_LINE}\nthreshold,fraction\n");
    for [t, f] in curve {
        s.push_str(&format!("{t},{f}\n"));
    }
    s
}

/// Fixed-width text table of the summary columns.
pub fn format_table(rows: &[MetricSummary]) -> String {
    let mut s = format!("{:<10} {:>18} {:>9} {:>9} {:>8}\n", "setting", "NRMSE ± std", "auc@0.07", "auc@0.08", "excluded");
    for r in rows {
        s.push_str(&format!(
            "{:<10} {:>18} {:>9.3} {:>9.3} {:>8}\n",
            r.setting,
            format!("{:.4} ± {:.4}", r.nrmse_mean, r.nrmse_std),
            r.auc_007,
            r.auc_008,
            r.excluded
        ));
    }
    s
}

/// Runs the landmark network over images in batches and decodes every output.
pub fn predict_landmarks(g2: &mut UNet<f32>, images: &[Tensor<f32>], keypoints: usize) -> Result<Vec<Vec<Decoded>>> {
    const BATCH: usize = 32;
    if g2.spec.out_channels != keypoints + 1 {
        return Err(Error::Input(format!(
            "model predicts {} keypoints, data has {keypoints}",
            g2.spec.out_channels.saturating_sub(1)
        )));
    }
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(BATCH) {
        let x = Tensor::stack(chunk)?;
        if x.shape()[1..] != [g2.spec.in_channels, g2.spec.size, g2.spec.size] {
            return Err(Error::Shape(format!(
                "model expects {}×{s}×{s} inputs, got {:?}",
                g2.spec.in_channels,
                &x.shape()[1..],
                s = g2.spec.size
            )));
        }
        let y = g2.predict(&x)?;
        for i in 0..chunk.len() {
            out.push(decode_heatmaps(&y.item(i)?, keypoints)?);
        }
    }
    Ok(out)
}

/// Per-sample records and summary of a model on a labelled set.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub summary: MetricSummary,
    pub records: Vec<ErrorRecord>,
    pub ced: Vec<[f64; 2]>,
}

pub fn evaluate_model(g2: &mut UNet<f32>, samples: &[FaceSample], normalizer: Normalizer, setting: &str) -> Result<Evaluation> {
    let k = keypoints_of(samples)?;
    let images: Vec<Tensor<f32>> = samples.iter().map(|s| s.image.clone()).collect();
    let preds = predict_landmarks(g2, &images, k)?;
    evaluate_predictions(samples, &preds, normalizer, setting)
}

fn keypoints_of(samples: &[FaceSample]) -> Result<usize> {
    let k = samples
        .first()
        .ok_or_else(|| Error::Input("empty evaluation set".into()))?
        .keypoints();
    if let Some(s) = samples.iter().find(|s| s.keypoints() != k) {
        return Err(Error::Input(format!("mixed keypoint counts: {k} and {}", s.keypoints())));
    }
    Ok(k)
}

/// Scores already-decoded predictions against the labelled samples.
pub fn evaluate_predictions(
    samples: &[FaceSample],
    preds: &[Vec<Decoded>],
    normalizer: Normalizer,
    setting: &str,
) -> Result<Evaluation> {
    let k = keypoints_of(samples)?;
    if preds.len() != samples.len() || preds.iter().any(|p| p.len() != k) {
        return Err(Error::Input(format!(
            "{} predictions for {} samples of {k} keypoints",
            preds.len(),
            samples.len()
        )));
    }
    let records = samples
        .iter()
        .zip(preds)
        .map(|(s, p)| {
            let pts: Vec<[f64; 2]> = p.iter().map(|d| d.point).collect();
            nrmse(&pts, &s.landmarks, &s.visible, s.bbox, normalizer)
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = MetricSummary::from_records(setting, &records)?;
    let ced = ced_curve(&included_errors(&records), &default_ced_grid())?;
    Ok(Evaluation { summary, records, ced })
}

/// Target landmark positions in the unit square and the output raster side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalTemplate {
    pub points: Vec<[f64; 2]>,
    pub size: usize,
}

impl CanonicalTemplate {
    pub fn new(points: Vec<[f64; 2]>, size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::Config(format!("template raster of side {size}")));
        }
        for (i, a) in points.iter().enumerate() {
            if points[i + 1..].iter().any(|b| dist(*a, *b) < 1e-9) {
                return Err(Error::Config(format!("template point {i} is duplicated")));
            }
        }
        Ok(CanonicalTemplate { points, size })
    }

    /// The average synthetic face, filling the raster.
    pub fn average_face(keypoints: usize, size: usize) -> Result<Self> {
        Self::new(canonical_landmarks(keypoints)?, size)
    }

    /// Template points in output pixels.
    pub fn pixels(&self) -> Vec<[f64; 2]> {
        let s = (self.size - 1) as f64;
        self.points.iter().map(|p| [p[0] * s, p[1] * s]).collect()
    }
}

/// An aligned crop and the map from input pixels to crop pixels.
#[derive(Clone, Debug)]
pub struct Alignment {
    pub image: Tensor<f32>,
    pub transform: Affine,
    /// Root-mean-square residual of the fit, in crop pixels.
    pub residual: f64,
}

/// Exact similarity through two correspondences.
fn similarity_from_two(src: [[f64; 2]; 2], dst: [[f64; 2]; 2]) -> Result<Affine> {
    let (dx, dy) = (src[1][0] - src[0][0], src[1][1] - src[0][1]);
    let (ex, ey) = (dst[1][0] - dst[0][0], dst[1][1] - dst[0][1]);
    let d2 = dx * dx + dy * dy;
    if d2 < 1e-12 {
        return Err(Error::Degenerate("the two landmarks coincide".into()));
    }
    // (a + ib) = (ex + i ey) / (dx + i dy)
    let a = (ex * dx + ey * dy) / d2;
    let b = (ey * dx - ex * dy) / d2;
    Ok([
        [a, -b, dst[0][0] - (a * src[0][0] - b * src[0][1])],
        [b, a, dst[0][1] - (b * src[0][0] + a * src[0][1])],
    ])
}

/// Least-squares affine map from `src` to `dst`; falls back to a similarity for two points.
pub fn fit_affine(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<Affine> {
    if src.len() != dst.len() {
        return Err(Error::Shape(format!("{} source and {} target points", src.len(), dst.len())));
    }
    match src.len() {
        0 | 1 => return Err(Error::Degenerate(format!("{} correspondences, at least 2 needed", src.len()))),
        2 => return similarity_from_two([src[0], src[1]], [dst[0], dst[1]]),
        _ => {}
    }
    let n = src.len();
    let (cx, cy) = (
        src.iter().map(|p| p[0]).sum::<f64>() / n as f64,
        src.iter().map(|p| p[1]).sum::<f64>() / n as f64,
    );
    let centred = DMatrix::from_fn(n, 2, |i, j| src[i][j] - if j == 0 { cx } else { cy });
    let sv = centred.singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    if !(lo > 1e-9 * hi.max(1.0)) {
        return Err(Error::Degenerate("landmarks are collinear".into()));
    }
    let x = DMatrix::from_fn(n, 3, |i, j| if j == 2 { 1.0 } else { src[i][j] });
    let svd = x.svd(true, true);
    let mut m = [[0.0; 3]; 2];
    for (axis, row) in m.iter_mut().enumerate() {
        let b = DVector::from_iterator(n, dst.iter().map(|p| p[axis]));
        let sol = svd.solve(&b, 1e-12).map_err(|e| Error::Degenerate(e.to_string()))?;
        row.copy_from_slice(sol.as_slice());
    }
    Ok(m)
}

/// Warps `image` so that its visible landmarks land on the template.
pub fn align_affine(
    image: &Tensor<f32>,
    landmarks: &[[f64; 2]],
    visible: &[bool],
    template: &CanonicalTemplate,
) -> Result<Alignment> {
    if landmarks.len() != template.points.len() || visible.len() != landmarks.len() {
        return Err(Error::Input(format!(
            "{} landmarks for a {}-point template",
            landmarks.len(),
            template.points.len()
        )));
    }
    let targets = template.pixels();
    let (src, dst): (Vec<[f64; 2]>, Vec<[f64; 2]>) = landmarks
        .iter()
        .zip(&targets)
        .zip(visible)
        .filter(|(_, &v)| v)
        .map(|((p, t), _)| (*p, *t))
        .unzip();
    let transform = fit_affine(&src, &dst)?;
    let inverse = invert_affine(&transform).ok_or_else(|| Error::Degenerate("fitted transform is singular".into()))?;
    let residual = (src
        .iter()
        .zip(&dst)
        .map(|(p, t)| dist(apply_affine(&transform, *p), *t).powi(2))
        .sum::<f64>()
        / src.len() as f64)
        .sqrt();
    Ok(Alignment {
        image: warp_image(image, &inverse, template.size, template.size),
        transform,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(e: f64) -> ErrorRecord {
        ErrorRecord {
            error: Some(e),
            normalizer: Normalizer::Bbox,
            visible: 1,
        }
    }

    #[test]
    fn nrmse_examples() {
        let gt = [[10.0, 10.0], [20.0, 20.0]];
        let r = nrmse(&gt, &gt, &[true, true], [0.0, 0.0, 50.0, 50.0], Normalizer::Bbox).unwrap();
        assert_eq!(r.error, Some(0.0));
        let pred = [[13.0, 14.0], [99.0, 99.0]];
        let r = nrmse(&pred, &gt, &[true, false], [0.0, 0.0, 50.0, 50.0], Normalizer::Bbox).unwrap();
        assert_eq!(r.error, Some(0.1));
        assert_eq!(r.visible, 1);
        let none = nrmse(&pred, &gt, &[false, false], [0.0, 0.0, 50.0, 50.0], Normalizer::Bbox).unwrap();
        assert_eq!(none.error, None);
        assert!(nrmse(&pred, &gt, &[true, true], [0.0, 0.0, 0.0, 50.0], Normalizer::Bbox).is_err());
    }

    #[test]
    fn interpupil_uses_eye_distance() {
        let gt = [[0.0, 0.0], [10.0, 0.0], [5.0, 5.0], [2.0, 8.0], [8.0, 8.0]];
        let mut pred = gt;
        pred[2] = [5.0, 7.0];
        let r = nrmse(&pred, &gt, &[true; 5], [0.0; 4], Normalizer::InterPupil).unwrap();
        assert!((r.error.unwrap() - 2.0 / 5.0 / 10.0).abs() < 1e-12);
        assert!(nrmse(&pred[..3], &gt[..3], &[true; 3], [0.0; 4], Normalizer::InterPupil).is_err());
        assert_eq!("interpupil".parse::<Normalizer>().unwrap(), Normalizer::InterPupil);
        assert!("diag".parse::<Normalizer>().is_err());
    }

    #[test]
    fn auc_examples() {
        assert!((auc_at(&[0.0; 10], 0.07).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(auc_at(&[0.2, 0.5, 0.08], 0.07).unwrap(), 0.0);
        let half = [0.0, 0.0, 1.0, 1.0];
        assert!((auc_at(&half, 0.08).unwrap() - 50.0).abs() < 1e-9);
        assert!(auc_at(&half, 0.0).is_err());
    }

    #[test]
    fn ced_examples() {
        let grid = default_ced_grid();
        let c = ced_curve(&[0.0; 4], &grid).unwrap();
        assert!(c.iter().all(|p| p[1] == 1.0));
        let c = ced_curve(&[0.01, 0.05, 0.2], &grid).unwrap();
        assert!(c.windows(2).all(|w| w[0][1] <= w[1][1]));
        assert_eq!(ced_curve(&[0.01, 0.05, 0.2], &[f64::INFINITY]).unwrap()[0][1], 1.0);
        assert!(ced_curve(&[], &grid).is_err());
    }

    #[test]
    fn summary_counts_exclusions() {
        let mut recs = vec![rec(0.01), rec(0.03)];
        recs.push(ErrorRecord {
            error: None,
            normalizer: Normalizer::Bbox,
            visible: 0,
        });
        let s = MetricSummary::from_records("S1", &recs).unwrap();
        assert_eq!(s.excluded, 1);
        assert!((s.nrmse_mean - 0.02).abs() < 1e-15);
        assert!((s.nrmse_std - 0.01).abs() < 1e-15);
    }

    #[test]
    fn csv_roundtrip() {
        let rows = vec![
            MetricSummary::from_records("S1", &[rec(0.1), rec(0.02)]).unwrap(),
            MetricSummary::from_records("S2", &[rec(0.013), rec(0.031), rec(1.0 / 3.0)]).unwrap(),
        ];
        let text = summaries_to_csv(&rows).unwrap();
        assert!(text.starts_with("# schema=1\nsetting,nrmse_mean,nrmse_std,auc_0.07,auc_0.08,excluded\n"));
        assert_eq!(summaries_from_csv(&text).unwrap(), rows);
        assert!(summaries_from_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn identity_alignment() {
        let t = CanonicalTemplate::average_face(5, 32).unwrap();
        let img = Tensor::from_fn(&[3, 32, 32], |i| (i % 7) as f32 / 7.0);
        let a = align_affine(&img, &t.pixels(), &[true; 5], &t).unwrap();
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        for r in 0..2 {
            for c in 0..3 {
                assert!((a.transform[r][c] - id[r][c]).abs() < 1e-6);
            }
        }
        assert!(a.image.zip_map(&img, |x, y| (x - y).abs()).unwrap().max_abs() < 1e-5);
    }

    #[test]
    fn recovers_generating_transform() {
        let t = CanonicalTemplate::average_face(19, 48).unwrap();
        let gen = [[0.8, -0.3, 5.0], [0.25, 0.9, -2.0]];
        let inv = invert_affine(&gen).unwrap();
        // input landmarks that the generating map sends onto the template
        let src: Vec<[f64; 2]> = t.pixels().iter().map(|&p| apply_affine(&inv, p)).collect();
        let a = align_affine(&Tensor::zeros(&[3, 40, 40]), &src, &[true; 19], &t).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                assert!((a.transform[r][c] - gen[r][c]).abs() < 1e-4);
            }
        }
        for (p, q) in src.iter().zip(t.pixels()) {
            assert!(dist(apply_affine(&a.transform, *p), q) < 1e-3);
        }
        assert!(a.residual < 1e-9);
        assert_eq!(a.image.shape(), [3, 48, 48]);
    }

    #[test]
    fn degenerate_correspondences() {
        let line = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        let err = fit_affine(&line, &line).unwrap_err();
        assert!(err.to_string().contains("collinear"));
        assert!(fit_affine(&line[..1], &line[..1]).is_err());
        assert!(fit_affine(&[[1.0, 1.0], [1.0, 1.0]], &line[..2]).is_err());
    }

    #[test]
    fn two_point_similarity() {
        let src = [[0.0, 0.0], [2.0, 0.0]];
        let dst = [[1.0, 1.0], [1.0, 5.0]];
        let m = fit_affine(&src, &dst).unwrap();
        for (p, q) in src.iter().zip(dst) {
            assert!(dist(apply_affine(&m, *p), q) < 1e-12);
        }
        // rotation by 90° with scale 2
        assert!((m[0][0]).abs() < 1e-12 && (m[1][0] - 2.0).abs() < 1e-12);
    }
}
