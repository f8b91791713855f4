//! Hand-worked examples for the losses, the synthetic data and the metrics.

use lowres_landmarks::autodiff::{kernels, Graph, Var};
use lowres_landmarks::eval::{
    align_affine, auc_at, ced_curve, evaluate_model, evaluate_predictions, nrmse, CanonicalTemplate, Normalizer,
};
use lowres_landmarks::losses::{
    began_d, began_losses, g2_objective, g2_total, h2l_total, heatmap_error, hinge_d, hinge_g, lsgan_conf, lsgan_d3,
    pixel_l2, BalanceState, LossWeights,
};
use lowres_landmarks::networks::{Profile, UNet, UNetSpec};
use lowres_landmarks::nn::Mode;
use lowres_landmarks::synth::{
    apply_affine, decode_heatmaps, degrade_realistic, downsample_landmarks, encode_heatmaps, generate_face,
    subsample_f, warp_sample, DegradationParams, FaceConfig, WarpParams, HEATMAP_SIGMA,
};
use lowres_landmarks::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Outcome = std::result::Result<(), String>;

/// One worked example.
pub struct Check {
    pub name: &'static str,
    pub run: fn() -> Outcome,
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn close(got: f64, want: f64, tol: f64, what: &str) -> Outcome {
    ensure!((got - want).abs() <= tol, "{what}: got {got}, want {want} ± {tol:e}");
    Ok(())
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

/// Loss value of `f` applied to column vectors of scores.
fn scalar(inputs: &[&[f64]], f: impl FnOnce(&mut Graph<f64>, &[Var]) -> lowres_landmarks::Result<Var>) -> Result<f64, String> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|v| g.constant(Tensor::from_vec(&[v.len(), 1], v.to_vec()).expect("shape")))
        .collect();
    let out = f(&mut g, &vars).map_err(e)?;
    Ok(g.value(out).data()[0])
}

fn tensors(ts: &[Tensor<f64>], f: impl FnOnce(&mut Graph<f64>, &[Var]) -> lowres_landmarks::Result<Var>) -> Result<f64, String> {
    let mut g = Graph::new();
    let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars).map_err(e)?;
    Ok(g.value(out).data()[0])
}

fn one(v: f64) -> Tensor<f64> {
    Tensor::scalar(v)
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
}

fn tiny_d2(seed: u64) -> UNet<f64> {
    let spec = UNetSpec {
        in_channels: 9,
        out_channels: 6,
        size: 8,
        widths: vec![2, 3],
        blocks_per_group: 1,
    };
    UNet::new(spec, &mut ChaCha8Rng::seed_from_u64(seed)).expect("valid spec")
}

fn desk_face(seed: u64) -> lowres_landmarks::synth::FaceSample {
    generate_face(seed, &FaceConfig::default()).expect("default face config")
}

fn pixel(t: &Tensor<f32>, c: usize, y: usize, x: usize) -> f32 {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    t.data()[(c * h + y) * w + x]
}

pub fn checks() -> Vec<Check> {
    vec![
        // high-to-low losses
        Check {
            name: "hinge_d_saturated_margins",
            run: || close(scalar(&[&[2.0], &[-2.0]], |g, v| hinge_d(g, v[0], v[1]))?, 0.0, 0.0, "hinge_d"),
        },
        Check {
            name: "hinge_d_zero_scores",
            run: || close(scalar(&[&[0.0], &[0.0]], |g, v| hinge_d(g, v[0], v[1]))?, 2.0, 0.0, "hinge_d"),
        },
        Check {
            name: "hinge_d_partial_margins",
            run: || close(scalar(&[&[0.5], &[-0.25]], |g, v| hinge_d(g, v[0], v[1]))?, 1.25, 0.0, "hinge_d"),
        },
        Check {
            name: "hinge_g_zero",
            run: || close(scalar(&[&[0.0]], |g, v| hinge_g(g, v[0]))?, 0.0, 0.0, "hinge_g"),
        },
        Check {
            name: "hinge_g_three",
            run: || close(scalar(&[&[3.0]], |g, v| hinge_g(g, v[0]))?, -3.0, 0.0, "hinge_g"),
        },
        Check {
            name: "hinge_g_decreasing",
            run: || {
                let base = [0.3, -1.2, 2.0];
                let l0 = scalar(&[&base], |g, v| hinge_g(g, v[0]))?;
                for i in 0..base.len() {
                    let mut up = base;
                    up[i] += 0.5;
                    let l = scalar(&[&up], |g, v| hinge_g(g, v[0]))?;
                    ensure!(l < l0, "raising score {i} did not lower the loss");
                }
                Ok(())
            },
        },
        Check {
            name: "pixel_l2_identical",
            run: || {
                let x = random(&[2, 3, 4, 4], 1);
                close(tensors(&[x.clone(), x], |g, v| pixel_l2(g, v[0], v[1]))?, 0.0, 0.0, "pixel_l2")
            },
        },
        Check {
            name: "pixel_l2_unit_difference",
            run: || {
                let (a, b) = (Tensor::full(&[1, 3, 4, 4], 1.0), Tensor::zeros(&[1, 3, 4, 4]));
                close(tensors(&[a, b], |g, v| pixel_l2(g, v[0], v[1]))?, 1.0, 0.0, "pixel_l2")
            },
        },
        Check {
            name: "h2l_total_arithmetic",
            run: || {
                let w = LossWeights { alpha: 1.0, beta: 0.1, ..LossWeights::default() };
                close(tensors(&[one(2.0), one(5.0)], |g, v| h2l_total(g, v[0], v[1], &w))?, 2.5, 1e-12, "h2l_total")
            },
        },
        Check {
            name: "h2l_total_without_pixel_term",
            run: || {
                let w = LossWeights { beta: 0.0, ..LossWeights::default() };
                close(tensors(&[one(1.7), one(9.0)], |g, v| h2l_total(g, v[0], v[1], &w))?, 1.7, 0.0, "h2l_total")
            },
        },
        Check {
            name: "h2l_total_linear",
            run: || {
                let w = LossWeights { alpha: 0.7, beta: 0.3, ..LossWeights::default() };
                let f = |a: f64, b: f64| tensors(&[one(a), one(b)], |g, v| h2l_total(g, v[0], v[1], &w));
                let sum = f(1.5, -2.0)? + f(0.25, 4.0)?;
                close(f(1.75, 2.0)?, sum, 1e-12, "additivity")?;
                close(f(3.0, -4.0)?, 2.0 * f(1.5, -2.0)?, 1e-12, "homogeneity")
            },
        },
        // heatmap adversarial losses
        Check {
            name: "began_perfect_reconstruction",
            run: || {
                let h = random(&[2, 6, 8, 8], 2);
                close(tensors(&[h.clone(), h], |g, v| heatmap_error(g, v[0], v[1]))?, 0.0, 0.0, "l_real")
            },
        },
        Check {
            name: "began_k_zero",
            run: || {
                let mut d2 = tiny_d2(3);
                let mut g = Graph::new();
                let gt = g.constant(random(&[2, 6, 8, 8], 4));
                let pred = g.constant(random(&[2, 6, 8, 8], 5));
                let img = g.constant(random(&[2, 3, 8, 8], 6));
                let t = began_losses(&mut g, &mut d2, gt, pred, img, 0.0, Mode::Train).map_err(e)?;
                let (l_d, l_real) = (g.value(t.l_d).data()[0], g.value(t.l_real).data()[0]);
                ensure!(l_d == l_real, "l_d {l_d} != l_real {l_real}");
                Ok(())
            },
        },
        Check {
            name: "began_d_arithmetic",
            run: || close(tensors(&[one(1.0), one(0.4)], |g, v| began_d(g, v[0], v[1], 0.5))?, 0.8, 1e-12, "l_d"),
        },
        Check {
            name: "kt_update_arithmetic",
            run: || {
                let s = BalanceState { k: 0.5, lambda_k: 0.001, gamma: 0.5, t_update: 1 };
                close(s.updated(1.0, 0.4).k, 0.5001, 1e-12, "k")
            },
        },
        Check {
            name: "kt_update_clamps_at_one",
            run: || {
                let s = BalanceState { k: 1.0, ..BalanceState::default() };
                close(s.updated(1.0, 0.1).k, 1.0, 0.0, "k")
            },
        },
        Check {
            name: "kt_update_fixed_point",
            run: || {
                let s = BalanceState { k: 0.3, lambda_k: 0.01, gamma: 0.5, t_update: 1 };
                ensure!(s.updated(0.8, 0.4).k == 0.3, "γ·l_real = l_fake moved k");
                ensure!(s.updated(0.8, 0.3).k != 0.3, "γ·l_real ≠ l_fake left k in place");
                Ok(())
            },
        },
        Check {
            name: "lsgan_d3_perfect_discriminator",
            run: || {
                let l = scalar(&[&[1.0, 1.0], &[0.0, 0.0], &[0.0]], |g, v| lsgan_d3(g, v[0], v[1], v[2]))?;
                close(l, 0.0, 0.0, "lsgan_d3")
            },
        },
        Check {
            name: "lsgan_d3_undecided",
            run: || {
                let l = scalar(&[&[0.5; 3], &[0.5; 2], &[0.5; 4]], |g, v| lsgan_d3(g, v[0], v[1], v[2]))?;
                close(l, 0.75, 0.0, "lsgan_d3")
            },
        },
        Check {
            name: "lsgan_d3_symmetric_fakes",
            run: || {
                let (r, a, b): (&[f64], &[f64], &[f64]) = (&[0.9, 0.2], &[0.1, 0.7, -0.3], &[0.4]);
                let l1 = scalar(&[r, a, b], |g, v| lsgan_d3(g, v[0], v[1], v[2]))?;
                let l2 = scalar(&[r, b, a], |g, v| lsgan_d3(g, v[0], v[1], v[2]))?;
                close(l1, l2, 1e-15, "swapped fake streams")
            },
        },
        Check {
            name: "g2_total_vanishes",
            run: || {
                let h = random(&[2, 6, 8, 8], 7);
                let w = LossWeights::default();
                let total = tensors(&[h.clone(), h, Tensor::full(&[4, 1], 1.0)], |g, v| {
                    let mse = heatmap_error(g, v[0], v[1])?;
                    let kp = heatmap_error(g, v[1], v[1])?;
                    let conf = lsgan_conf(g, &[v[2]])?;
                    g2_total(g, mse, Some(kp), Some(conf), &w)
                })?;
                close(total, 0.0, 0.0, "l_G")
            },
        },
        Check {
            name: "g2_total_supervised_only",
            run: || {
                let mut d2 = tiny_d2(8);
                let w = LossWeights { a: 1.0, b: 0.0, c: 0.0, ..LossWeights::default() };
                let mut g = Graph::new();
                let gt = g.constant(random(&[2, 6, 8, 8], 9));
                let pred = g.constant(random(&[2, 6, 8, 8], 10));
                let img = g.constant(random(&[2, 3, 8, 8], 11));
                let score = g.constant(random(&[2, 1], 12));
                let t = g2_objective(&mut g, gt, pred, img, Some(&mut d2), &[score], &w, Mode::Train).map_err(e)?;
                let mse = heatmap_error(&mut g, gt, pred).map_err(e)?;
                close(g.value(t.total).data()[0], g.value(mse).data()[0], 0.0, "l_G vs l_MSE")
            },
        },
        // synthetic faces
        Check {
            name: "generate_face_deterministic",
            run: || {
                ensure!(desk_face(17) == desk_face(17), "two renders of seed 17 differ");
                Ok(())
            },
        },
        Check {
            name: "generate_face_landmarks_in_bbox",
            run: || {
                let cfg = FaceConfig::default();
                for seed in 0..10_000 {
                    let f = generate_face(seed, &cfg).map_err(e)?;
                    let [x, y, w, h] = f.bbox;
                    for (p, &v) in f.landmarks.iter().zip(&f.visible) {
                        ensure!(
                            !v || (p[0] >= x && p[0] <= x + w && p[1] >= y && p[1] <= y + h),
                            "seed {seed}: landmark {p:?} outside bbox {:?}",
                            f.bbox
                        );
                    }
                }
                Ok(())
            },
        },
        Check {
            name: "subsample_constant",
            run: || {
                let x = Tensor::full(&[3, 64, 64], 0.3f32);
                let y = subsample_f(&x, 4).map_err(e)?;
                ensure!(y.shape() == [3, 16, 16], "shape {:?}", y.shape());
                ensure!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-6), "not constant 0.3");
                Ok(())
            },
        },
        Check {
            name: "subsample_quarter_side",
            run: || {
                let y = subsample_f(&desk_face(1).image, 4).map_err(e)?;
                ensure!(y.shape()[1] == 16 && y.shape()[2] == 16, "shape {:?}", y.shape());
                Ok(())
            },
        },
        Check {
            name: "subsample_preserves_mean",
            run: || {
                let x = desk_face(2).image;
                let y = subsample_f(&x, 4).map_err(e)?;
                let m = |t: &Tensor<f32>| t.data().iter().map(|&v| v as f64).sum::<f64>() / t.numel() as f64;
                close(m(&y), m(&x), 1e-6, "global mean")
            },
        },
        Check {
            name: "degrade_zero_ranges",
            run: || {
                // without blur, noise or jitter only the per-stage smoothing of F is missing
                let x = desk_face(3).image;
                let d = degrade_realistic(&x, &DegradationParams::none(4), 5).map_err(e)?;
                let x4 = x.clone().reshape(&[1, 3, 64, 64]).map_err(e)?;
                let pooled = kernels::avg_pool2(&kernels::avg_pool2(&x4).map_err(e)?).map_err(e)?;
                let pooled = pooled.reshape(&[3, 16, 16]).map_err(e)?;
                for (a, b) in d.data().iter().zip(pooled.data()) {
                    ensure!((a - b).abs() < 1e-6, "degraded {a} vs pooled {b}");
                }
                Ok(())
            },
        },
        Check {
            name: "degrade_differs_from_subsample",
            run: || {
                let x = desk_face(4).image;
                let d = degrade_realistic(&x, &DegradationParams::default(), 9).map_err(e)?;
                let f = subsample_f(&x, 4).map_err(e)?;
                let mad = d.data().iter().zip(f.data()).map(|(a, b)| (a - b).abs() as f64).sum::<f64>();
                ensure!(mad > 0.0, "degraded image equals the clean subsample");
                Ok(())
            },
        },
        Check {
            name: "encode_gaussian_values",
            run: || {
                let h = encode_heatmaps(&[[8.0, 8.0]], &[true], 32, HEATMAP_SIGMA).map_err(e)?;
                close(pixel(&h, 0, 8, 8) as f64, 1.0, 0.0, "peak")?;
                close(pixel(&h, 0, 10, 8) as f64, (-0.5f64).exp(), 1e-6, "value at (8, 10)")
            },
        },
        Check {
            name: "encode_invisible",
            run: || {
                let h = encode_heatmaps(&[[3.0, 4.0], [9.0, 9.0]], &[false, false], 16, HEATMAP_SIGMA).map_err(e)?;
                let plane = 16 * 16;
                ensure!(h.data()[..2 * plane].iter().all(|&v| v == 0.0), "keypoint channels not zero");
                ensure!(h.data()[2 * plane..].iter().all(|&v| v == 1.0), "background not one");
                Ok(())
            },
        },
        Check {
            name: "decode_grid_roundtrip",
            run: || {
                let h = encode_heatmaps(&[[8.0, 8.0]], &[true], 32, HEATMAP_SIGMA).map_err(e)?;
                let d = decode_heatmaps(&h, 1).map_err(e)?;
                ensure!(d[0].point == [8.0, 8.0] && d[0].visible, "decoded {:?}", d[0]);
                Ok(())
            },
        },
        Check {
            name: "decode_zero_channel_invisible",
            run: || {
                let d = decode_heatmaps(&Tensor::zeros(&[2, 16, 16]), 1).map_err(e)?;
                ensure!(!d[0].visible, "zero channel decoded as visible");
                Ok(())
            },
        },
        Check {
            name: "augment_identity",
            run: || {
                let f = desk_face(5);
                let w = warp_sample(&f, &WarpParams::identity());
                ensure!(w.landmarks == f.landmarks && w.visible == f.visible, "landmarks moved");
                for (a, b) in w.image.data().iter().zip(f.image.data()) {
                    ensure!((a - b).abs() < 1e-6, "pixel {a} vs {b}");
                }
                Ok(())
            },
        },
        Check {
            name: "augment_translation",
            run: || {
                let f = desk_face(6);
                let p = WarpParams { translate: [5.0, 0.0], ..WarpParams::identity() };
                let w = warp_sample(&f, &p);
                for (a, b) in w.landmarks.iter().zip(&f.landmarks) {
                    ensure!(a[0] == b[0] + 5.0 && a[1] == b[1], "{b:?} became {a:?}");
                }
                Ok(())
            },
        },
        Check {
            name: "downsample_landmarks_factor_four",
            run: || {
                let d = downsample_landmarks(&[[32.0, 48.0]], 4.0).map_err(e)?;
                ensure!(d == [[8.0, 12.0]], "got {d:?}");
                Ok(())
            },
        },
        Check {
            name: "downsample_landmarks_identity",
            run: || {
                let l = vec![[1.25, 7.5], [30.0, 0.125]];
                ensure!(downsample_landmarks(&l, 1.0).map_err(e)? == l, "factor 1 changed the points");
                Ok(())
            },
        },
        // metrics
        Check {
            name: "nrmse_exact_prediction",
            run: || {
                let gt = [[10.0, 12.0], [30.0, 12.0], [20.0, 30.0]];
                let r = nrmse(&gt, &gt, &[true; 3], [0.0, 0.0, 50.0, 50.0], Normalizer::Bbox).map_err(e)?;
                close(r.error.unwrap_or(f64::NAN), 0.0, 0.0, "nrmse")
            },
        },
        Check {
            name: "nrmse_three_four_five",
            run: || {
                let r = nrmse(&[[13.0, 14.0]], &[[10.0, 10.0]], &[true], [0.0, 0.0, 50.0, 50.0], Normalizer::Bbox)
                    .map_err(e)?;
                close(r.error.unwrap_or(f64::NAN), 0.1, 1e-15, "nrmse")
            },
        },
        Check {
            name: "nrmse_ignores_invisible",
            run: || {
                let gt = [[10.0, 10.0], [20.0, 20.0]];
                let bbox = [0.0, 0.0, 50.0, 50.0];
                let a = nrmse(&[[13.0, 14.0], [20.0, 20.0]], &gt, &[true, false], bbox, Normalizer::Bbox).map_err(e)?;
                let b = nrmse(&[[13.0, 14.0], [99.0, -40.0]], &gt, &[true, false], bbox, Normalizer::Bbox).map_err(e)?;
                ensure!(a.error == b.error, "{:?} vs {:?}", a.error, b.error);
                Ok(())
            },
        },
        Check {
            name: "ced_all_zero",
            run: || {
                let c = ced_curve(&[0.0; 7], &[0.0, 0.01, 0.05, 0.1]).map_err(e)?;
                ensure!(c.iter().all(|p| p[1] == 1.0), "curve {c:?}");
                Ok(())
            },
        },
        Check {
            name: "ced_monotone",
            run: || {
                let mut rng = ChaCha8Rng::seed_from_u64(13);
                let errs: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..0.2)).collect();
                let grid: Vec<f64> = (0..=100).map(|i| i as f64 * 0.002).collect();
                let c = ced_curve(&errs, &grid).map_err(e)?;
                ensure!(c.windows(2).all(|w| w[1][1] >= w[0][1]), "curve decreases");
                Ok(())
            },
        },
        Check {
            name: "auc_all_zero",
            run: || close(auc_at(&[0.0; 5], 0.07).map_err(e)?, 100.0, 1e-9, "auc"),
        },
        Check {
            name: "auc_all_above",
            run: || close(auc_at(&[0.2, 0.5, 0.08], 0.07).map_err(e)?, 0.0, 1e-9, "auc"),
        },
        Check {
            name: "auc_half",
            run: || close(auc_at(&[0.0, 0.0, 0.3, 0.3], 0.07).map_err(e)?, 50.0, 1e-9, "auc"),
        },
        Check {
            name: "align_identity",
            run: || {
                let t = CanonicalTemplate::average_face(5, 32).map_err(e)?;
                let img = Tensor::zeros(&[3, 32, 32]);
                let a = align_affine(&img, &t.pixels(), &[true; 5], &t).map_err(e)?;
                let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
                for (r, ir) in a.transform.iter().zip(id) {
                    for (v, w) in r.iter().zip(ir) {
                        close(*v, w, 1e-6, "transform coefficient")?;
                    }
                }
                Ok(())
            },
        },
        Check {
            name: "align_exact_affine",
            run: || {
                let t = CanonicalTemplate::average_face(5, 32).map_err(e)?;
                let m = [[0.8, 0.3, 4.0], [-0.2, 1.1, -2.5]];
                let inv = lowres_landmarks::synth::invert_affine(&m).ok_or("singular")?;
                let src: Vec<[f64; 2]> = t.pixels().iter().map(|p| apply_affine(&inv, *p)).collect();
                let a = align_affine(&Tensor::zeros(&[3, 16, 16]), &src, &[true; 5], &t).map_err(e)?;
                for (p, q) in src.iter().zip(t.pixels()) {
                    let r = apply_affine(&a.transform, *p);
                    ensure!((r[0] - q[0]).hypot(r[1] - q[1]) < 1e-3, "{r:?} vs template {q:?}");
                }
                Ok(())
            },
        },
        Check {
            name: "evaluate_oracle_predictions",
            run: || {
                let cfg = FaceConfig { size: 16, ..FaceConfig::default() };
                let samples: Vec<_> = (0..20).map(|s| generate_face(s, &cfg)).collect::<Result<_, _>>().map_err(e)?;
                let preds = samples
                    .iter()
                    .map(|s| decode_heatmaps(&s.heatmaps()?, s.keypoints()))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(e)?;
                let ev = evaluate_predictions(&samples, &preds, Normalizer::Bbox, "oracle").map_err(e)?;
                for (r, s) in ev.records.iter().zip(&samples) {
                    let bound = 0.5 / (s.bbox[2] * s.bbox[3]).sqrt();
                    let err = r.error.unwrap_or(f64::INFINITY);
                    ensure!(err <= bound, "error {err} above {bound}");
                }
                Ok(())
            },
        },
        Check {
            name: "evaluate_model_deterministic",
            run: || {
                let cfg = FaceConfig { size: 16, ..FaceConfig::default() };
                let samples: Vec<_> = (0..6).map(|s| generate_face(s, &cfg)).collect::<Result<_, _>>().map_err(e)?;
                let spec = UNetSpec::g2(Profile::Desk, 5);
                let mut g2: UNet<f32> = UNet::new(spec, &mut ChaCha8Rng::seed_from_u64(1)).map_err(e)?;
                let a = evaluate_model(&mut g2, &samples, Normalizer::Bbox, "x").map_err(e)?;
                let b = evaluate_model(&mut g2, &samples, Normalizer::Bbox, "x").map_err(e)?;
                ensure!(a.summary == b.summary && a.records == b.records, "two evaluations differ");
                Ok(())
            },
        },
    ]
}
