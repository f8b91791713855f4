//! Analytic gradients against central differences in f64.

use lowres_landmarks::autodiff::{Graph, Var};
use lowres_landmarks::gradcheck::finite_diff_gradient;
use lowres_landmarks::losses::{
    began_d, began_losses, g2_objective, g2_total, h2l_total, heatmap_error, hinge_d, hinge_g, lsgan_conf, lsgan_d3,
    pixel_l2, LossWeights,
};
use lowres_landmarks::networks::{DiscSpec, Discriminator, G1Spec, Network, UNet, UNetSpec, G1};
use lowres_landmarks::nn::{BatchNorm, Builder, Conv, Linear, Mode, ParamStore, ResidualBlock};
use lowres_landmarks::{Result, Tensor};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Relative tolerance every case must meet.
pub const TOLERANCE: f64 = 1e-4;
pub const STEP: f64 = 1e-5;
/// Seeds per case.
pub const SEEDS: u64 = 10;
/// Entries probed per tensor; larger tensors are subsampled.
const MAX_ENTRIES: usize = 48;

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = StandardNormal.sample(rng);
        v * scale
    })
}

/// A bare layer with its parameters.
#[derive(Clone)]
pub struct Layer<L: Clone> {
    pub layer: L,
    pub store: ParamStore<f64>,
}

impl<L: Clone> Network<f64> for Layer<L> {
    fn store(&self) -> &ParamStore<f64> {
        &self.store
    }
    fn store_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.store
    }
}

impl<L: Clone> Layer<L> {
    pub fn build(seed: u64, f: impl FnOnce(&mut Builder<'_, f64>) -> L) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = f(&mut Builder::new(&mut store, &mut rng));
        Layer { layer, store }
    }
}

/// Replaces every parameter by random values so that no gradient is trivially
/// structured (unit scales, zero biases).
pub fn randomize(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for p in store.params_mut() {
        p.value = randn(rng, p.value.shape(), 0.5);
    }
}

fn scalar_objective(g: &mut Graph<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    if g.value(out).numel() == 1 {
        return Ok(out);
    }
    let r = g.constant(weights.clone());
    let shape = g.value(out).shape().to_vec();
    let r = g.reshape(r, &shape)?;
    let p = g.mul(out, r)?;
    Ok(g.sum(p))
}

fn probe(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= MAX_ENTRIES {
        (0..n).collect()
    } else {
        let mut v = sample(rng, n, MAX_ENTRIES).into_vec();
        v.sort();
        v
    }
}

fn discrepancy(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Worst relative discrepancy over the inputs and every parameter of `model`
/// for the scalar `Σ R ⊙ f(model, inputs)` (or `f` itself when it is scalar).
pub fn grad_error<M, F>(model: &M, inputs: &[Tensor<f64>], seed: u64, f: F) -> Result<f64>
where
    M: Network<f64> + Clone,
    F: Fn(&mut M, &mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // output shape first, for the fixed projection
    let out_numel = {
        let mut m = model.clone();
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let o = f(&mut m, &mut g, &vars)?;
        g.value(o).numel()
    };
    let weights = randn(&mut rng, &[out_numel], 1.0);
    let eval = |m: &mut M, ins: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let o = f(m, &mut g, &vars)?;
        let l = scalar_objective(&mut g, o, &weights)?;
        Ok(g.value(l).data()[0])
    };

    let mut m = model.clone();
    m.store_mut().zero_grads();
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let o = f(&mut m, &mut g, &vars)?;
    let l = scalar_objective(&mut g, o, &weights)?;
    g.backward(l)?;
    m.store_mut().collect_grads(&g)?;

    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
        let idx = probe(t.numel(), &mut rng);
        let mut numeric = Vec::with_capacity(idx.len());
        for &j in &idx {
            let mut ins = inputs.to_vec();
            numeric.push(fd_entry(|x| {
                ins[i] = x.clone();
                eval(&mut model.clone(), &ins)
            }, t, j)?);
        }
        let a: Vec<f64> = idx.iter().map(|&j| analytic.data()[j]).collect();
        worst = worst.max(discrepancy(&a, &numeric));
    }
    for p in 0..model.store().params().len() {
        let value = model.store().params()[p].value.clone();
        let analytic = m.store().params()[p].grad.clone();
        let idx = probe(value.numel(), &mut rng);
        let mut numeric = Vec::with_capacity(idx.len());
        for &j in &idx {
            numeric.push(fd_entry(|x| {
                let mut mm = model.clone();
                mm.store_mut().params_mut()[p].value = x.clone();
                eval(&mut mm, inputs)
            }, &value, j)?);
        }
        let a: Vec<f64> = idx.iter().map(|&j| analytic.data()[j]).collect();
        worst = worst.max(discrepancy(&a, &numeric));
    }
    Ok(worst)
}

/// Central difference along one coordinate.
fn fd_entry(mut f: impl FnMut(&Tensor<f64>) -> Result<f64>, x: &Tensor<f64>, j: usize) -> Result<f64> {
    let one = Tensor::from_vec(&[1], vec![x.data()[j]])?;
    let d = finite_diff_gradient(
        |t| {
            let mut probe = x.clone();
            probe.data_mut()[j] = t.data()[0];
            f(&probe)
        },
        &one,
        STEP,
    )?;
    Ok(d.data()[0])
}

/// A named gradient check run once per seed.
pub struct GradCase {
    pub name: &'static str,
    pub run: fn(u64) -> Result<f64>,
}

fn empty() -> Layer<()> {
    Layer::build(0, |_| ())
}

fn inputs(seed: u64, shapes: &[&[usize]]) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shapes.iter().map(|s| randn(&mut rng, s, 1.0)).collect()
}

fn layer<L: Clone>(seed: u64, f: impl FnOnce(&mut Builder<'_, f64>) -> L) -> Layer<L> {
    let mut l = Layer::build(seed, f);
    randomize(&mut l.store, &mut ChaCha8Rng::seed_from_u64(seed + 1000));
    l
}

pub fn op_case(seed: u64, shapes: &[&[usize]], f: fn(&mut Graph<f64>, &[Var]) -> Result<Var>) -> Result<f64> {
    grad_error(&empty(), &inputs(seed, shapes), seed, |_, g, v| f(g, v))
}

fn weights() -> LossWeights {
    LossWeights::default()
}

fn tiny_unet(seed: u64, cin: usize, cout: usize) -> UNet<f64> {
    let spec = UNetSpec {
        in_channels: cin,
        out_channels: cout,
        size: 4,
        widths: vec![2, 3],
        blocks_per_group: 1,
    };
    let mut n = UNet::new(spec, &mut ChaCha8Rng::seed_from_u64(seed)).expect("valid spec");
    randomize(&mut n.store, &mut ChaCha8Rng::seed_from_u64(seed + 1));
    n
}

fn tiny_disc(seed: u64, cin: usize) -> Discriminator<f64> {
    let spec = DiscSpec {
        in_channels: cin,
        size: 4,
        widths: vec![2, 3],
        pooled_stages: 1,
        spectral_norm: true,
        power_iterations: 1,
    };
    let mut n = Discriminator::new(spec, &mut ChaCha8Rng::seed_from_u64(seed)).expect("valid spec");
    randomize(&mut n.store, &mut ChaCha8Rng::seed_from_u64(seed + 1));
    n
}

/// Heatmap-like tensors in (0, 1).
fn unit_inputs(seed: u64, shapes: &[&[usize]]) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shapes
        .iter()
        .map(|s| Tensor::from_fn(s, |_| rng.random_range(0.05..0.95)))
        .collect()
}

pub fn cases() -> Vec<GradCase> {
    vec![
        // tape operations
        GradCase { name: "add", run: |s| op_case(s, &[&[2, 3], &[2, 3]], |g, v| g.add(v[0], v[1])) },
        GradCase { name: "sub", run: |s| op_case(s, &[&[2, 3], &[2, 3]], |g, v| g.sub(v[0], v[1])) },
        GradCase { name: "mul", run: |s| op_case(s, &[&[2, 3], &[2, 3]], |g, v| g.mul(v[0], v[1])) },
        GradCase { name: "affine", run: |s| op_case(s, &[&[4]], |g, v| Ok(g.affine(v[0], -1.7, 0.3))) },
        GradCase { name: "relu", run: |s| op_case(s, &[&[3, 4]], |g, v| Ok(g.relu(v[0]))) },
        GradCase { name: "sigmoid", run: |s| op_case(s, &[&[3, 4]], |g, v| Ok(g.sigmoid(v[0]))) },
        GradCase { name: "tanh", run: |s| op_case(s, &[&[3, 4]], |g, v| Ok(g.tanh(v[0]))) },
        GradCase { name: "square", run: |s| op_case(s, &[&[3, 4]], |g, v| Ok(g.square(v[0]))) },
        GradCase { name: "max_pool2", run: |s| op_case(s, &[&[2, 2, 4, 4]], |g, v| g.max_pool2(v[0])) },
        GradCase { name: "avg_pool2", run: |s| op_case(s, &[&[2, 2, 4, 4]], |g, v| g.avg_pool2(v[0])) },
        GradCase { name: "upsample2", run: |s| op_case(s, &[&[2, 2, 3, 3]], |g, v| g.upsample2(v[0])) },
        GradCase { name: "concat", run: |s| op_case(s, &[&[2, 1, 3, 3], &[2, 2, 3, 3]], |g, v| g.concat(&[v[0], v[1]])) },
        GradCase { name: "mean", run: |s| op_case(s, &[&[2, 5]], |g, v| Ok(g.mean(v[0]))) },
        GradCase { name: "sum", run: |s| op_case(s, &[&[2, 5]], |g, v| Ok(g.sum(v[0]))) },
        GradCase { name: "sum_spatial", run: |s| op_case(s, &[&[2, 3, 3, 3]], |g, v| g.sum_spatial(v[0])) },
        GradCase { name: "reshape", run: |s| op_case(s, &[&[2, 6]], |g, v| g.reshape(v[0], &[3, 4])) },
        GradCase {
            name: "linear_op",
            run: |s| op_case(s, &[&[3, 4], &[2, 4], &[2]], |g, v| g.linear(v[0], v[1], Some(v[2]))),
        },
        GradCase {
            name: "conv2d_op",
            run: |s| op_case(s, &[&[2, 2, 5, 5], &[3, 2, 3, 3], &[3]], |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1)),
        },
        // layers
        GradCase {
            name: "conv3x3",
            run: |s| {
                let l = layer(s, |b| Conv::new(b, "c", 2, 3, 3, true));
                grad_error(&l, &inputs(s, &[&[2, 2, 5, 5]]), s, |m, g, v| m.layer.forward(g, &mut m.store, v[0], Mode::Train))
            },
        },
        GradCase {
            name: "conv1x1",
            run: |s| {
                let l = layer(s, |b| Conv::new(b, "c", 3, 2, 1, false));
                grad_error(&l, &inputs(s, &[&[2, 3, 4, 4]]), s, |m, g, v| m.layer.forward(g, &mut m.store, v[0], Mode::Train))
            },
        },
        GradCase {
            name: "linear",
            run: |s| {
                let l = layer(s, |b| Linear::new(b, "l", 5, 3, true));
                grad_error(&l, &inputs(s, &[&[4, 5]]), s, |m, g, v| m.layer.forward(g, &mut m.store, v[0], Mode::Train))
            },
        },
        GradCase {
            name: "batch_norm_train",
            run: |s| {
                let l = layer(s, |b| BatchNorm::new(b, "bn", 3));
                grad_error(&l, &inputs(s, &[&[3, 3, 3, 3]]), s, |m, g, v| m.layer.forward(g, &mut m.store, v[0], Mode::Train))
            },
        },
        GradCase {
            name: "batch_norm_eval",
            run: |s| {
                let mut l = layer(s, |b| BatchNorm::new(b, "bn", 3));
                let mut rng = ChaCha8Rng::seed_from_u64(s + 7);
                for buf in l.store.buffers_mut() {
                    buf.value = Tensor::from_fn(buf.value.shape(), |_| rng.random_range(0.5..2.0));
                }
                grad_error(&l, &inputs(s, &[&[2, 3, 3, 3]]), s, |m, g, v| m.layer.forward(g, &mut m.store, v[0], Mode::Eval))
            },
        },
        GradCase {
            name: "residual_block",
            run: |s| {
                let l = layer(s, |b| ResidualBlock::new(b, "r", 2, 3, None));
                grad_error(&l, &inputs(s, &[&[3, 2, 4, 4]]), s, |m, g, v| m.layer.forward(g, &mut m.store, v[0], Mode::Train))
            },
        },
        // spectral layers hold the power-iteration vector fixed, as the forward pass of one step does
        GradCase {
            name: "spectral_conv",
            run: |s| {
                let l = layer(s, |b| {
                    let c = Conv::new(b, "c", 2, 3, 3, true);
                    c.with_spectral(b, "c", 1)
                });
                grad_error(&l, &inputs(s, &[&[2, 2, 4, 4]]), s, |m, g, v| m.layer.forward(g, &mut m.store, v[0], Mode::Eval))
            },
        },
        GradCase {
            name: "spectral_linear",
            run: |s| {
                let l = layer(s, |b| {
                    let c = Linear::new(b, "l", 4, 3, true);
                    c.with_spectral(b, "l", 1)
                });
                grad_error(&l, &inputs(s, &[&[2, 4]]), s, |m, g, v| m.layer.forward(g, &mut m.store, v[0], Mode::Eval))
            },
        },
        GradCase {
            name: "spectral_residual_block",
            run: |s| {
                let l = layer(s, |b| ResidualBlock::new(b, "r", 2, 2, Some(1)));
                grad_error(&l, &inputs(s, &[&[2, 2, 4, 4]]), s, |m, g, v| m.layer.forward(g, &mut m.store, v[0], Mode::Eval))
            },
        },
        // whole networks at toy sizes
        GradCase {
            name: "g1_network",
            run: |s| {
                let spec = G1Spec {
                    hr_size: 8,
                    lr_size: 4,
                    noise_len: 3,
                    encoder: vec![2, 3],
                    decoder: vec![3, 2],
                    blocks_per_stage: 1,
                    bottleneck: 2,
                    // the skip base is a constant of the input, not part of the tape
                    input_skip: false,
                };
                let mut n = G1::new(spec, &mut ChaCha8Rng::seed_from_u64(s))?;
                randomize(&mut n.store, &mut ChaCha8Rng::seed_from_u64(s + 1));
                let mut ins = inputs(s, &[&[2, 3, 8, 8], &[2, 3]]);
                ins[0] = ins[0].map(|v| v.tanh() * 0.9);
                grad_error(&n, &ins, s, |m, g, v| m.forward(g, v[0], v[1], Mode::Train))
            },
        },
        GradCase {
            name: "discriminator_network",
            run: |s| {
                let n = tiny_disc(s, 3);
                grad_error(&n, &inputs(s, &[&[2, 3, 4, 4]]), s, |m, g, v| m.forward(g, v[0], Mode::Eval))
            },
        },
        GradCase {
            name: "unet_network",
            run: |s| {
                let n = tiny_unet(s, 3, 2);
                grad_error(&n, &inputs(s, &[&[2, 3, 4, 4]]), s, |m, g, v| m.forward(g, v[0], Mode::Train))
            },
        },
        // losses
        GradCase { name: "hinge_d", run: |s| op_case(s, &[&[6, 1], &[6, 1]], |g, v| hinge_d(g, v[0], v[1])) },
        GradCase { name: "hinge_g", run: |s| op_case(s, &[&[6, 1]], |g, v| hinge_g(g, v[0])) },
        GradCase { name: "pixel_l2", run: |s| op_case(s, &[&[2, 3, 4, 4], &[2, 3, 4, 4]], |g, v| pixel_l2(g, v[0], v[1])) },
        GradCase {
            name: "h2l_total",
            run: |s| op_case(s, &[&[1], &[1]], |g, v| h2l_total(g, v[0], v[1], &weights())),
        },
        GradCase {
            name: "heatmap_error",
            run: |s| op_case(s, &[&[2, 3, 4, 4], &[2, 3, 4, 4]], |g, v| heatmap_error(g, v[0], v[1])),
        },
        GradCase { name: "began_d", run: |s| op_case(s, &[&[1], &[1]], |g, v| began_d(g, v[0], v[1], 0.37)) },
        GradCase {
            name: "began_losses",
            run: |s| {
                let d2 = tiny_unet(s, 5, 2);
                let ins = unit_inputs(s, &[&[2, 2, 4, 4], &[2, 2, 4, 4], &[2, 3, 4, 4]]);
                grad_error(&d2, &ins, s, |m, g, v| Ok(began_losses(g, m, v[0], v[1], v[2], 0.3, Mode::Train)?.l_d))
            },
        },
        GradCase {
            name: "lsgan_d3",
            run: |s| op_case(s, &[&[4, 1], &[4, 1], &[4, 1]], |g, v| lsgan_d3(g, v[0], v[1], v[2])),
        },
        GradCase { name: "lsgan_conf", run: |s| op_case(s, &[&[4, 1], &[3, 1]], |g, v| lsgan_conf(g, &[v[0], v[1]])) },
        GradCase {
            name: "g2_total",
            run: |s| op_case(s, &[&[1], &[1], &[1]], |g, v| g2_total(g, v[0], Some(v[1]), Some(v[2]), &weights())),
        },
        GradCase {
            name: "g2_objective",
            run: |s| {
                let d2 = tiny_unet(s, 5, 2);
                let d3 = tiny_disc(s + 3, 5);
                let ins = unit_inputs(s, &[&[2, 2, 4, 4], &[2, 2, 4, 4], &[2, 3, 4, 4]]);
                let both = (d2, d3);
                grad_error(&Pair(both), &ins, s, |m, g, v| {
                    let Pair((d2, d3)) = m;
                    let score = d3.forward_pair(g, v[2], v[1], Mode::Eval)?;
                    Ok(g2_objective(g, v[0], v[1], v[2], Some(d2), &[score], &weights(), Mode::Train)?.total)
                })
            },
        },
    ]
}

/// Two networks checked together (their parameters live in separate stores;
/// only the first store's parameters are probed).
#[derive(Clone)]
pub struct Pair(pub (UNet<f64>, Discriminator<f64>));

impl Network<f64> for Pair {
    fn store(&self) -> &ParamStore<f64> {
        &self.0 .0.store
    }
    fn store_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.0 .0.store
    }
}

/// Worst discrepancy of `case` over [`SEEDS`] seeds.
pub fn worst_over_seeds(case: &GradCase) -> Result<f64> {
    (0..SEEDS).try_fold(0.0f64, |w, s| Ok(w.max((case.run)(s)?)))
}
