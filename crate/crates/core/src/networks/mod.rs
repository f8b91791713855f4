//! The five networks: high-to-low generator G1, its discriminator D1, the
//! heatmap U-Net G2, the autoencoding heatmap discriminator D2 and the
//! confidence discriminator D3.

mod spec;

pub use spec::{DiscSpec, G1Spec, Profile, UNetSpec};

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{kernels, Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Builder, Conv, Linear, Mode, ParamStore, ResidualBlock};
use crate::tensor::{Real, Tensor};

/// Anything that owns a parameter store (used by checkpoints and optimizers).
pub trait Network<T: Real> {
    fn store(&self) -> &ParamStore<T>;
    fn store_mut(&mut self) -> &mut ParamStore<T>;
}

fn expect_input<T: Real>(g: &Graph<T>, x: Var, channels: usize, size: usize, what: &str) -> Result<usize> {
    let (n, c, h, w) = g.value(x).dims4()?;
    if c != channels || h != size || w != size {
        return Err(Error::Shape(format!(
            "{what}: expected N×{channels}×{size}×{size}, got {:?}",
            g.value(x).shape()
        )));
    }
    Ok(n)
}

#[derive(Clone, Copy, Debug)]
struct ConvBn {
    conv: Conv,
    bn: BatchNorm,
}

impl ConvBn {
    fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, cin: usize, cout: usize) -> Self {
        b.scoped(name, |b| ConvBn {
            conv: Conv::new(b, "conv", cin, cout, 3, false),
            bn: BatchNorm::new(b, "bn", cout),
        })
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, s: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let h = self.conv.forward(g, s, x, mode)?;
        let h = self.bn.forward(g, s, h, mode)?;
        Ok(g.relu(h))
    }
}

#[derive(Clone, Debug)]
struct G1Stage {
    blocks: Vec<ResidualBlock>,
    transition: ConvBn,
}

impl G1Stage {
    fn forward<T: Real>(&self, g: &mut Graph<T>, s: &mut ParamStore<T>, mut x: Var, mode: Mode) -> Result<Var> {
        for blk in &self.blocks {
            x = blk.forward(g, s, x, mode)?;
        }
        self.transition.forward(g, s, x, mode)
    }
}

/// High-to-low generator.
#[derive(Clone, Debug)]
pub struct G1<T: Real> {
    pub spec: G1Spec,
    pub store: ParamStore<T>,
    noise: Linear,
    stem: ConvBn,
    encoder: Vec<G1Stage>,
    decoder: Vec<G1Stage>,
    head: Conv,
}

impl<T: Real> G1<T> {
    pub fn new(spec: G1Spec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, rng);
        let hr2 = spec.hr_size * spec.hr_size;
        let noise = Linear::new(&mut b, "noise", spec.noise_len, hr2, true);
        let stem = ConvBn::new(&mut b, "stem", 4, spec.encoder[0]);
        let stage = |b: &mut Builder<'_, T>, name: String, w: usize, next: usize| {
            b.scoped(&name, |b| G1Stage {
                blocks: (0..spec.blocks_per_stage)
                    .map(|i| ResidualBlock::new(b, &format!("block{i}"), w, w, None))
                    .collect(),
                transition: ConvBn::new(b, "transition", w, next),
            })
        };
        let encoder = (0..spec.encoder_stages())
            .map(|s| stage(&mut b, format!("enc{s}"), spec.encoder[s], spec.encoder[s + 1]))
            .collect();
        let decoder = (0..spec.decoder_stages())
            .map(|s| stage(&mut b, format!("dec{s}"), spec.decoder[s], spec.decoder[s + 1]))
            .collect();
        let head = Conv::new(&mut b, "head", *spec.decoder.last().expect("validated"), 3, 3, true);
        Ok(G1 {
            spec,
            store,
            noise,
            stem,
            encoder,
            decoder,
            head,
        })
    }

    /// `image: N×3×HR×HR`, `z: N×noise_len` → `N×3×LR×LR` in `[−1, 1]`.
    pub fn forward(&mut self, g: &mut Graph<T>, image: Var, z: Var, mode: Mode) -> Result<Var> {
        let spec = &self.spec;
        let n = expect_input(g, image, 3, spec.hr_size, "G1")?;
        if g.value(z).shape() != [n, spec.noise_len] {
            return Err(Error::Shape(format!(
                "G1: expected noise {n}×{}, got {:?}",
                spec.noise_len,
                g.value(z).shape()
            )));
        }
        let s = &mut self.store;
        let zp = self.noise.forward(g, s, z, mode)?;
        let zp = g.reshape(zp, &[n, 1, spec.hr_size, spec.hr_size])?;
        let x = g.concat(&[image, zp])?;
        let mut h = self.stem.forward(g, s, x, mode)?;
        // an extra pool when the encoder has fewer stages than halvings
        if spec.pools() > spec.encoder_stages() {
            h = g.max_pool2(h)?;
        }
        for stage in &self.encoder {
            h = stage.forward(g, s, h, mode)?;
            h = g.max_pool2(h)?;
        }
        for (i, stage) in self.decoder.iter().enumerate() {
            h = stage.forward(g, s, h, mode)?;
            if i < spec.upsamples() {
                h = g.upsample2(h)?;
            }
        }
        let mut out = self.head.forward(g, s, h, mode)?;
        if spec.input_skip {
            // pre-activation base: tanh(0 + base) is the area-averaged input
            let mut p = g.value(image).clone();
            for _ in 0..(spec.hr_size / spec.lr_size).trailing_zeros() {
                p = kernels::avg_pool2(&p)?;
            }
            let lim = T::from_f64(0.995).expect("representable");
            let base = g.constant(p.map(|v| v.max(-lim).min(lim).atanh()));
            out = g.add(out, base)?;
        }
        Ok(g.tanh(out))
    }

    /// Eval-mode forward on plain tensors.
    pub fn generate(&mut self, image: &Tensor<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(image.clone());
        let z = g.constant(z.clone());
        let y = self.forward(&mut g, x, z, Mode::Eval)?;
        Ok(g.value(y).clone())
    }
}

impl<T: Real> Network<T> for G1<T> {
    fn store(&self) -> &ParamStore<T> {
        &self.store
    }
    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }
}

#[derive(Clone, Debug)]
struct DiscStage {
    block: ResidualBlock,
    conv: Conv,
    pool: bool,
}

/// Spectrally normalised residual discriminator with a scalar score per item.
#[derive(Clone, Debug)]
pub struct Discriminator<T: Real> {
    pub spec: DiscSpec,
    pub store: ParamStore<T>,
    stem: Conv,
    stages: Vec<DiscStage>,
    head: Linear,
}

impl<T: Real> Discriminator<T> {
    pub fn new(spec: DiscSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, rng);
        let sn = spec.spectral_norm.then_some(spec.power_iterations);
        let with_sn = |c: Conv, b: &mut Builder<'_, T>, name: &str| match sn {
            Some(it) => c.with_spectral(b, name, it),
            None => c,
        };
        let c = Conv::new(&mut b, "stem", spec.in_channels, spec.widths[0], 3, true);
        let stem = with_sn(c, &mut b, "stem");
        let n = spec.widths.len();
        let mut stages = Vec::with_capacity(n);
        for (s, &w) in spec.widths.iter().enumerate() {
            let prev = if s == 0 { spec.widths[0] } else { spec.widths[s - 1] };
            stages.push(b.scoped(&format!("stage{s}"), |b| {
                let block = ResidualBlock::new(b, "block", prev, w, sn);
                let c = Conv::new(b, "conv", w, w, 3, true);
                DiscStage {
                    block,
                    conv: with_sn(c, b, "conv"),
                    pool: s >= n - spec.pooled_stages,
                }
            }));
        }
        let mut head = Linear::new(&mut b, "head", *spec.widths.last().expect("validated"), 1, true);
        if let Some(it) = sn {
            head = head.with_spectral(&mut b, "head", it);
        }
        Ok(Discriminator {
            spec,
            store,
            stem,
            stages,
            head,
        })
    }

    /// `x: N×C×S×S` → `N×1` scores.
    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        expect_input(g, x, self.spec.in_channels, self.spec.size, "discriminator")?;
        let s = &mut self.store;
        let h = self.stem.forward(g, s, x, mode)?;
        let mut h = g.relu(h);
        for st in &self.stages {
            h = st.block.forward(g, s, h, mode)?;
            h = st.conv.forward(g, s, h, mode)?;
            h = g.relu(h);
            if st.pool {
                h = g.max_pool2(h)?;
            }
        }
        let pooled = g.sum_spatial(h)?;
        self.head.forward(g, s, pooled, mode)
    }

    /// D3 input convention: the LR image concatenated with a heatmap stack.
    pub fn forward_pair(&mut self, g: &mut Graph<T>, image: Var, heatmaps: Var, mode: Mode) -> Result<Var> {
        let x = g.concat(&[image, heatmaps])?;
        self.forward(g, x, mode)
    }

    /// Runs every persistent singular-vector estimate to convergence. Training
    /// advances them one step per iteration, so they lag the weights slightly.
    pub fn converge_spectral(&mut self, max_iterations: usize) {
        let s = &mut self.store;
        self.stem.converge_spectral(s, max_iterations);
        for st in &self.stages {
            st.block.convs().for_each(|c| c.converge_spectral(s, max_iterations));
            st.conv.converge_spectral(s, max_iterations);
        }
        self.head.converge_spectral(s, max_iterations);
    }

    /// Every normalised weight in the score path, as used by the forward pass.
    pub fn normalized_weights(&self) -> Vec<(String, Tensor<T>)> {
        let s = &self.store;
        let mut out = Vec::new();
        let mut push = |c: &Conv| out.push((s.param(c.weight).name.clone(), c.normalized_weight(s)));
        push(&self.stem);
        for st in &self.stages {
            st.block.convs().for_each(&mut push);
            push(&st.conv);
        }
        out.push((s.param(self.head.weight).name.clone(), self.head.normalized_weight(s)));
        out
    }
}

impl<T: Real> Network<T> for Discriminator<T> {
    fn store(&self) -> &ParamStore<T> {
        &self.store
    }
    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }
}

/// U-shaped residual network with mirrored skip connections and a logistic output.
#[derive(Clone, Debug)]
pub struct UNet<T: Real> {
    pub spec: UNetSpec,
    pub store: ParamStore<T>,
    stem: ConvBn,
    encoder: Vec<Vec<ResidualBlock>>,
    decoder: Vec<Vec<ResidualBlock>>,
    head: Conv,
}

impl<T: Real> UNet<T> {
    pub fn new(spec: UNetSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, rng);
        let w = &spec.widths;
        let stem = ConvBn::new(&mut b, "stem", spec.in_channels, w[0]);
        let group = |b: &mut Builder<'_, T>, name: String, cin: usize, cout: usize| {
            b.scoped(&name, |b| {
                (0..spec.blocks_per_group)
                    .map(|i| {
                        let from = if i == 0 { cin } else { cout };
                        ResidualBlock::new(b, &format!("block{i}"), from, cout, None)
                    })
                    .collect::<Vec<_>>()
            })
        };
        let mut encoder = Vec::new();
        for (i, &wi) in w.iter().enumerate() {
            let prev = if i == 0 { w[0] } else { w[i - 1] };
            encoder.push(group(&mut b, format!("enc{i}"), prev, wi));
        }
        // decoder group i sits at the resolution of encoder group i, walking back up
        let mut decoder = Vec::new();
        for i in (0..w.len()).rev() {
            let below = if i + 1 == w.len() { w[i] } else { w[i + 1] };
            decoder.push(group(&mut b, format!("dec{i}"), below + w[i], w[i]));
        }
        let head = Conv::new(&mut b, "head", w[0], spec.out_channels, 1, true);
        Ok(UNet {
            spec,
            store,
            stem,
            encoder,
            decoder,
            head,
        })
    }

    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        self.run(g, x, mode, true)
    }

    /// Forward pass with every skip connection replaced by zeros.
    pub fn forward_without_skips(&mut self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        self.run(g, x, mode, false)
    }

    fn run(&mut self, g: &mut Graph<T>, x: Var, mode: Mode, skips: bool) -> Result<Var> {
        expect_input(g, x, self.spec.in_channels, self.spec.size, "U-Net")?;
        let s = &mut self.store;
        let mut h = self.stem.forward(g, s, x, mode)?;
        let mut saved = Vec::with_capacity(self.encoder.len());
        for grp in &self.encoder {
            for blk in grp {
                h = blk.forward(g, s, h, mode)?;
            }
            saved.push(h);
            h = g.max_pool2(h)?;
        }
        for grp in &self.decoder {
            let skip = saved.pop().expect("one skip per group");
            let skip = if skips {
                skip
            } else {
                g.constant(Tensor::zeros(g.value(skip).shape()))
            };
            h = g.upsample2(h)?;
            h = g.concat(&[h, skip])?;
            for blk in grp {
                h = blk.forward(g, s, h, mode)?;
            }
        }
        let out = self.head.forward(g, s, h, mode)?;
        Ok(g.sigmoid(out))
    }

    /// D2 input convention: heatmaps concatenated with their image.
    pub fn forward_pair(&mut self, g: &mut Graph<T>, heatmaps: Var, image: Var, mode: Mode) -> Result<Var> {
        let (hs, is) = (g.value(heatmaps).shape(), g.value(image).shape());
        if hs.len() != 4 || is.len() != 4 || hs[2..] != is[2..] {
            return Err(Error::Shape(format!("heatmaps {hs:?} and image {is:?} differ in spatial size")));
        }
        let x = g.concat(&[heatmaps, image])?;
        self.forward(g, x, mode)
    }

    /// Eval-mode forward on a plain tensor.
    pub fn predict(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(x.clone());
        let y = self.forward(&mut g, x, Mode::Eval)?;
        Ok(g.value(y).clone())
    }
}

impl<T: Real> Network<T> for UNet<T> {
    fn store(&self) -> &ParamStore<T> {
        &self.store
    }
    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }
}
