use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{
    checked, epoch_order, lr_schedule, noise_rows, with_snapshot, MetricsLog, RunOptions, TrainConfig, STREAM_GENERATE,
    STREAM_INIT, STREAM_NOISE, STREAM_REAL,
};
use crate::autodiff::Graph;
use crate::checkpoint::{Checkpoint, NetState};
use crate::error::{Error, Result};
use crate::losses::{h2l_total, hinge_d, hinge_g, pixel_l2, LossWeights};
use crate::networks::{DiscSpec, Discriminator, G1Spec, G1};
use crate::nn::Mode;
use crate::optim::Adam;
use crate::synth::{derive_seed, subsample_f, FaceSample};
use crate::tensor::Tensor;

pub const STAGE: &str = "high_to_low";

/// Loss values of one stage-1 iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct H2lLosses {
    pub d_loss: f64,
    pub g_gan: f64,
    pub g_pixel: f64,
    pub g_total: f64,
}

/// Generator, discriminator and their optimisers.
#[derive(Clone, Debug)]
pub struct HighToLow {
    pub g1: G1<f32>,
    pub d1: Discriminator<f32>,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub iteration: u64,
}

impl HighToLow {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_INIT, 1));
        let g1 = G1::new(G1Spec::for_profile(cfg.profile), &mut rng)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_INIT, 2));
        let d1 = Discriminator::new(DiscSpec::d1(cfg.profile), &mut rng)?;
        Ok(HighToLow {
            g1,
            d1,
            opt_g: Adam::new(cfg.optimizer)?,
            opt_d: Adam::new(cfg.optimizer)?,
            iteration: 0,
        })
    }

    /// One discriminator update followed by one generator update on the same batch.
    /// `target` is the clean LR version of `hr` the pixel term compares against.
    pub fn step(
        &mut self,
        hr: &Tensor<f32>,
        target: &Tensor<f32>,
        real_lr: &Tensor<f32>,
        z: &Tensor<f32>,
        lr: f64,
        w: &LossWeights,
    ) -> Result<H2lLosses> {
        let it = self.iteration + 1;
        let mut g = Graph::new();
        let x = g.constant(hr.clone());
        let zv = g.constant(z.clone());
        let fake = self.g1.forward(&mut g, x, zv, Mode::Train)?;

        let real = g.constant(real_lr.clone());
        let fake_d = g.detach(fake);
        let s_real = self.d1.forward(&mut g, real, Mode::Train)?;
        let s_fake = self.d1.forward(&mut g, fake_d, Mode::Train)?;
        let l_d = hinge_d(&mut g, s_real, s_fake)?;
        let d_loss = checked(&g, l_d, it, "d_loss")?;
        g.backward(l_d)?;
        self.d1.store.collect_grads(&g)?;
        self.opt_d.step(&mut self.d1.store, lr);

        let s_gen = self.d1.forward(&mut g, fake, Mode::Train)?;
        let l_gan = hinge_g(&mut g, s_gen)?;
        let tgt = g.constant(target.clone());
        let l_pix = pixel_l2(&mut g, fake, tgt)?;
        let total = h2l_total(&mut g, l_gan, l_pix, w)?;
        let losses = H2lLosses {
            d_loss,
            g_gan: checked(&g, l_gan, it, "g_gan")?,
            g_pixel: checked(&g, l_pix, it, "g_pixel")?,
            g_total: checked(&g, total, it, "g_total")?,
        };
        g.backward(total)?;
        self.g1.store.collect_grads(&g)?;
        self.opt_g.step(&mut self.g1.store, lr);
        self.iteration = it;
        Ok(losses)
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig, log: &MetricsLog) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(json!({
            "stage": STAGE,
            "iteration": self.iteration,
            "config": cfg,
            "log": log.to_csv(),
        }));
        ck.nets.push(NetState::capture("g1", serde_json::to_value(&self.g1.spec)?, &self.g1.store, Some(&self.opt_g)));
        ck.nets.push(NetState::capture("d1", serde_json::to_value(&self.d1.spec)?, &self.d1.store, Some(&self.opt_d)));
        Ok(ck)
    }

    /// Restores a full training state (weights, buffers, optimiser moments).
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, TrainConfig, MetricsLog)> {
        expect_stage(ck, STAGE)?;
        let cfg: TrainConfig = serde_json::from_value(ck.metadata["config"].clone())?;
        let mut s = HighToLow::new(&cfg)?;
        let d = ck.net("d1")?;
        s.d1 = Discriminator::new(serde_json::from_value(d.spec.clone())?, &mut ChaCha8Rng::seed_from_u64(0))?;
        d.restore(&mut s.d1.store, Some(&mut s.opt_d))?;
        ck.net("g1")?.restore(&mut s.g1.store, Some(&mut s.opt_g))?;
        s.iteration = ck.metadata["iteration"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("missing iteration".into()))?;
        let log = MetricsLog::from_csv(ck.metadata["log"].as_str().unwrap_or(""))?;
        Ok((s, cfg, log))
    }
}

pub(crate) fn expect_stage(ck: &Checkpoint, stage: &str) -> Result<()> {
    match ck.metadata["stage"].as_str() {
        Some(s) if s == stage => Ok(()),
        other => Err(Error::Checkpoint(format!("expected a {stage} checkpoint, found {other:?}"))),
    }
}

/// The generator of a stage-1 checkpoint (weights and buffers only).
pub fn load_g1(ck: &Checkpoint) -> Result<G1<f32>> {
    expect_stage(ck, STAGE)?;
    let net = ck.net("g1")?;
    let mut g1 = G1::new(serde_json::from_value(net.spec.clone())?, &mut ChaCha8Rng::seed_from_u64(0))?;
    net.restore(&mut g1.store, None)?;
    Ok(g1)
}

/// Trains G1/D1 on HR images and an unpaired pool of real LR images.
pub fn train_high_to_low(
    cfg: &TrainConfig,
    hr: &[Tensor<f32>],
    real_lr: &[Tensor<f32>],
    opts: &RunOptions,
) -> Result<(HighToLow, MetricsLog)> {
    cfg.validate()?;
    let (hr_side, lr_side) = (cfg.profile.hr_size(), cfg.profile.lr_size());
    if real_lr.is_empty() {
        return Err(Error::Input("the real LR pool is empty".into()));
    }
    if let Some(t) = hr.iter().find(|t| t.shape() != [3, hr_side, hr_side]) {
        return Err(Error::Shape(format!("HR images must be 3×{hr_side}×{hr_side}, got {:?}", t.shape())));
    }
    if let Some(t) = real_lr.iter().find(|t| t.shape() != [3, lr_side, lr_side]) {
        return Err(Error::Shape(format!("real LR images must be 3×{lr_side}×{lr_side}, got {:?}", t.shape())));
    }
    let per_epoch = cfg.iterations_per_epoch(hr.len())?;
    let total = per_epoch * cfg.epochs as u64;
    let targets = hr
        .iter()
        .map(|t| subsample_f(t, cfg.profile.factor()))
        .collect::<Result<Vec<_>>>()?;

    let (mut state, mut log) = match &opts.resume {
        Some(ck) => {
            let (s, _, log) = HighToLow::from_checkpoint(ck)?;
            if ck.metadata["config"] != serde_json::to_value(cfg)? {
                return Err(Error::Config("resumed checkpoint was trained with a different configuration".into()));
            }
            (s, log)
        }
        None => (HighToLow::new(cfg)?, MetricsLog::new()),
    };
    let b = cfg.batch_size;
    let mut order: Option<(u64, Vec<usize>)> = None;
    while state.iteration < total {
        let it = state.iteration;
        let epoch = it / per_epoch;
        if order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            order = Some((epoch, epoch_order(cfg.seed, epoch, hr.len())));
        }
        let idx = &order.as_ref().expect("set above").1;
        let pos = (it % per_epoch) as usize * b;
        let pick = &idx[pos..pos + b];
        let hr_batch = Tensor::stack(&pick.iter().map(|&i| hr[i].clone()).collect::<Vec<_>>())?;
        let tgt_batch = Tensor::stack(&pick.iter().map(|&i| targets[i].clone()).collect::<Vec<_>>())?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_REAL, it));
        let real: Vec<Tensor<f32>> = (0..b).map(|_| real_lr[rng.random_range(0..real_lr.len())].clone()).collect();
        let real_batch = Tensor::stack(&real)?;
        let z = noise_rows(cfg.seed, STREAM_NOISE, it * b as u64, b, state.g1.spec.noise_len);
        let lr = lr_schedule(cfg, epoch as usize);
        let l = match state.step(&hr_batch, &tgt_batch, &real_batch, &z, lr, &cfg.weights) {
            Ok(l) => l,
            Err(e) => return Err(with_snapshot(e, opts, || state.to_checkpoint(cfg, &log))),
        };
        let n = state.iteration;
        for (name, v) in [
            ("d_loss", l.d_loss),
            ("g_gan", l.g_gan),
            ("g_pixel", l.g_pixel),
            ("g_total", l.g_total),
            ("lr", lr),
        ] {
            log.push(n, name, v)?;
        }
        if n % per_epoch == 0 {
            log::info!(
                "stage 1 epoch {}/{}: d {:.4}, gan {:.4}, pixel {:.5}",
                n / per_epoch,
                cfg.epochs,
                l.d_loss,
                l.g_gan,
                l.g_pixel
            );
        }
        if let Some(dir) = &opts.out_dir {
            if cfg.checkpoint_every > 0 && n % cfg.checkpoint_every == 0 {
                state.to_checkpoint(cfg, &log)?.save(&dir.join("stage1.ckpt"))?;
            }
        }
        if opts.stop_after.is_some_and(|s| n >= s) {
            break;
        }
    }
    if let Some(dir) = &opts.out_dir {
        save_outputs(dir, &state, cfg, &log)?;
    }
    Ok((state, log))
}

fn save_outputs(dir: &Path, state: &HighToLow, cfg: &TrainConfig, log: &MetricsLog) -> Result<()> {
    state.to_checkpoint(cfg, log)?.save(&dir.join("stage1.ckpt"))?;
    log.save(&dir.join("stage1_log.csv"))
}

/// Runs a frozen G1 over HR samples: generated LR images carrying the
/// downsampled HR labels. Sample `i` always gets the same noise for a given seed.
pub fn generate_lr_split(g1: &mut G1<f32>, hr: &[FaceSample], seed: u64) -> Result<Vec<FaceSample>> {
    const BATCH: usize = 32;
    let factor = g1.spec.hr_size / g1.spec.lr_size;
    let mut out = Vec::with_capacity(hr.len());
    for (c, chunk) in hr.chunks(BATCH).enumerate() {
        let x = Tensor::stack(&chunk.iter().map(|s| s.image.clone()).collect::<Vec<_>>())?;
        let z = noise_rows(seed, STREAM_GENERATE, (c * BATCH) as u64, chunk.len(), g1.spec.noise_len);
        let y = g1.generate(&x, &z)?;
        for (i, s) in chunk.iter().enumerate() {
            out.push(s.with_lr_image(y.item(i)?, factor)?);
        }
    }
    Ok(out)
}
