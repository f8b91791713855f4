use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::high_to_low::{expect_stage, generate_lr_split};
use super::{checked, epoch_order, lr_schedule, with_snapshot, MetricsLog, RunOptions, TrainConfig};
use super::{STREAM_AUGMENT, STREAM_INIT, STREAM_REAL};
use crate::autodiff::Graph;
use crate::checkpoint::{Checkpoint, NetState};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, Normalizer};
use crate::losses::{began_losses, g2_objective, lsgan_d3, BalanceState, LossWeights};
use crate::networks::{DiscSpec, Discriminator, UNet, UNetSpec, G1};
use crate::nn::Mode;
use crate::optim::Adam;
use crate::synth::{augment, derive_seed, subsampled_split, FaceSample};
use crate::tensor::Tensor;

pub const STAGE: &str = "landmark";

/// Rungs of the ablation ladder, plus supervised training at HR.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// Supervised on clean subsampled LR.
    S1,
    /// Supervised on generated LR.
    S2,
    /// Generated LR with the autoencoding heatmap discriminator.
    S3,
    /// As S3, plus the confidence discriminator over unlabelled real LR.
    S4,
    /// Supervised at HR.
    HrLd,
}

impl Setting {
    pub const LADDER: [Setting; 4] = [Setting::S1, Setting::S2, Setting::S3, Setting::S4];

    pub fn uses_d2(self) -> bool {
        matches!(self, Setting::S3 | Setting::S4)
    }

    pub fn uses_d3(self) -> bool {
        self == Setting::S4
    }

    /// Where the labelled training images of this setting come from.
    pub fn provenance(self) -> Provenance {
        match self {
            Setting::S1 => Provenance::Subsampled,
            Setting::HrLd => Provenance::HighRes,
            _ => Provenance::Generated,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Setting::S1 => "S1",
            Setting::S2 => "S2",
            Setting::S3 => "S3",
            Setting::S4 => "S4",
            Setting::HrLd => "HR-LD",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "s1" => Ok(Setting::S1),
            "s2" => Ok(Setting::S2),
            "s3" => Ok(Setting::S3),
            "s4" => Ok(Setting::S4),
            "hrld" => Ok(Setting::HrLd),
            _ => Err(Error::Config(format!("unknown setting {s:?} (s1, s2, s3, s4 or hrld)"))),
        }
    }
}

/// Origin of a training image. Only labelled origins may feed the
/// supervised term or the "real" stream of the heatmap discriminators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Subsampled,
    Generated,
    HighRes,
    /// Unlabelled real LR: prediction-only streams.
    RealLr,
}

impl Provenance {
    pub fn is_labelled(self) -> bool {
        self != Provenance::RealLr
    }
}

/// A labelled minibatch with the origin of every item.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub heatmaps: Tensor<f32>,
    pub provenance: Vec<Provenance>,
}

impl Batch {
    pub fn from_samples(samples: &[FaceSample], provenance: Provenance) -> Result<Self> {
        let images = Tensor::stack(&samples.iter().map(|s| s.image.clone()).collect::<Vec<_>>())?;
        let heatmaps = Tensor::stack(&samples.iter().map(|s| s.heatmaps()).collect::<Result<Vec<_>>>()?)?;
        Ok(Batch {
            images,
            heatmaps,
            provenance: vec![provenance; samples.len()],
        })
    }

    /// Role switching: every item of a labelled batch must carry ground truth.
    pub fn ensure_labelled(&self) -> Result<()> {
        if let Some(p) = self.provenance.iter().find(|p| !p.is_labelled()) {
            return Err(Error::Input(format!("a {p:?} image reached a supervised stream")));
        }
        Ok(())
    }
}

/// Loss values of one landmark iteration; absent terms are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LandmarkLosses {
    pub mse: f64,
    pub kp: Option<f64>,
    pub conf: Option<f64>,
    pub g_total: f64,
    pub d2_loss: Option<f64>,
    pub l_real: Option<f64>,
    pub l_fake: Option<f64>,
    pub d3_loss: Option<f64>,
    /// Balance term after this iteration's update.
    pub k: Option<f64>,
}

/// G2 and whichever discriminators the setting uses, with their optimisers.
#[derive(Clone, Debug)]
pub struct LandmarkModels {
    pub setting: Setting,
    pub g2: UNet<f32>,
    pub d2: Option<UNet<f32>>,
    pub d3: Option<Discriminator<f32>>,
    pub opt_g2: Adam,
    pub opt_d2: Adam,
    pub opt_d3: Adam,
    pub balance: BalanceState,
    pub iteration: u64,
}

fn init_rng(seed: u64, which: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_INIT, which))
}

impl LandmarkModels {
    /// Fresh networks. G2 starts from the same weights in every setting for a given seed.
    pub fn new(cfg: &TrainConfig, setting: Setting, keypoints: usize) -> Result<Self> {
        let p = cfg.profile;
        let spec = match setting {
            Setting::HrLd => UNetSpec::hr_ld(p, keypoints),
            _ => UNetSpec::g2(p, keypoints),
        };
        let g2 = UNet::new(spec, &mut init_rng(cfg.seed, 10))?;
        let d2 = if setting.uses_d2() {
            Some(UNet::new(UNetSpec::d2(p, keypoints), &mut init_rng(cfg.seed, 11))?)
        } else {
            None
        };
        let d3 = if setting.uses_d3() {
            Some(Discriminator::new(DiscSpec::d3(p, keypoints), &mut init_rng(cfg.seed, 12))?)
        } else {
            None
        };
        Ok(LandmarkModels {
            setting,
            g2,
            d2,
            d3,
            opt_g2: Adam::new(cfg.optimizer)?,
            opt_d2: Adam::new(cfg.optimizer)?,
            opt_d3: Adam::new(cfg.optimizer)?,
            balance: cfg.balance,
            iteration: 0,
        })
    }

    pub fn keypoints(&self) -> usize {
        self.g2.spec.out_channels - 1
    }

    /// One iteration: D2 update and balance step, D3 update, then the G2 update,
    /// all on the same minibatch. `real_lr` is required exactly when D3 is used.
    pub fn step(&mut self, batch: &Batch, real_lr: Option<&Tensor<f32>>, lr: f64, w: &LossWeights) -> Result<LandmarkLosses> {
        batch.ensure_labelled()?;
        if self.d3.is_some() != real_lr.is_some() {
            return Err(Error::Input(format!(
                "{} needs real LR images exactly when the confidence discriminator is used",
                self.setting
            )));
        }
        let it = self.iteration + 1;
        let mut out = LandmarkLosses::default();
        let mut g = Graph::new();
        let img = g.constant(batch.images.clone());
        let gt = g.constant(batch.heatmaps.clone());
        let pred = self.g2.forward(&mut g, img, Mode::Train)?;
        let pred_d = g.detach(pred);
        let real = match real_lr {
            Some(r) => {
                let x = g.constant(r.clone());
                let p = self.g2.forward(&mut g, x, Mode::Train)?;
                Some((x, p))
            }
            None => None,
        };

        if let Some(d2) = self.d2.as_mut() {
            let t = began_losses(&mut g, d2, gt, pred_d, img, self.balance.k, Mode::Train)?;
            out.d2_loss = Some(checked(&g, t.l_d, it, "d2_loss")?);
            let (lr_, lf) = (checked(&g, t.l_real, it, "l_real")?, checked(&g, t.l_fake, it, "l_fake")?);
            out.l_real = Some(lr_);
            out.l_fake = Some(lf);
            g.backward(t.l_d)?;
            d2.store.collect_grads(&g)?;
            self.opt_d2.step(&mut d2.store, lr);
            self.balance.step(it, lr_, lf);
            out.k = Some(self.balance.k);
        }

        let mut fake_scores = Vec::new();
        if let (Some(d3), Some((rx, rp))) = (self.d3.as_mut(), real) {
            let rp_d = g.detach(rp);
            let s_real = d3.forward_pair(&mut g, img, gt, Mode::Train)?;
            let s_gen = d3.forward_pair(&mut g, img, pred_d, Mode::Train)?;
            let s_rlr = d3.forward_pair(&mut g, rx, rp_d, Mode::Train)?;
            let l = lsgan_d3(&mut g, s_real, s_gen, s_rlr)?;
            out.d3_loss = Some(checked(&g, l, it, "d3_loss")?);
            g.backward(l)?;
            d3.store.collect_grads(&g)?;
            self.opt_d3.step(&mut d3.store, lr);
            fake_scores.push(d3.forward_pair(&mut g, img, pred, Mode::Train)?);
            fake_scores.push(d3.forward_pair(&mut g, rx, rp, Mode::Train)?);
        }

        let terms = g2_objective(&mut g, gt, pred, img, self.d2.as_mut(), &fake_scores, w, Mode::Train)?;
        out.mse = checked(&g, terms.mse, it, "mse")?;
        out.kp = terms.kp.map(|v| checked(&g, v, it, "kp")).transpose()?;
        out.conf = terms.conf.map(|v| checked(&g, v, it, "conf")).transpose()?;
        out.g_total = checked(&g, terms.total, it, "g_total")?;
        g.backward(terms.total)?;
        self.g2.store.collect_grads(&g)?;
        self.opt_g2.step(&mut self.g2.store, lr);
        self.iteration = it;
        Ok(out)
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig, log: &MetricsLog) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(json!({
            "stage": STAGE,
            "setting": self.setting,
            "keypoints": self.keypoints(),
            "iteration": self.iteration,
            "balance": self.balance,
            "config": cfg,
            "log": log.to_csv(),
        }));
        ck.nets.push(NetState::capture("g2", serde_json::to_value(&self.g2.spec)?, &self.g2.store, Some(&self.opt_g2)));
        if let Some(d2) = &self.d2 {
            ck.nets.push(NetState::capture("d2", serde_json::to_value(&d2.spec)?, &d2.store, Some(&self.opt_d2)));
        }
        if let Some(d3) = &self.d3 {
            ck.nets.push(NetState::capture("d3", serde_json::to_value(&d3.spec)?, &d3.store, Some(&self.opt_d3)));
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, TrainConfig, MetricsLog)> {
        expect_stage(ck, STAGE)?;
        let meta = &ck.metadata;
        let cfg: TrainConfig = serde_json::from_value(meta["config"].clone())?;
        let setting: Setting = serde_json::from_value(meta["setting"].clone())?;
        let k = meta["keypoints"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("missing keypoint count".into()))? as usize;
        let mut m = LandmarkModels::new(&cfg, setting, k)?;
        ck.net("g2")?.restore(&mut m.g2.store, Some(&mut m.opt_g2))?;
        if let Some(d2) = m.d2.as_mut() {
            ck.net("d2")?.restore(&mut d2.store, Some(&mut m.opt_d2))?;
        }
        if let Some(d3) = m.d3.as_mut() {
            ck.net("d3")?.restore(&mut d3.store, Some(&mut m.opt_d3))?;
        }
        m.balance = serde_json::from_value(meta["balance"].clone())?;
        m.iteration = meta["iteration"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("missing iteration".into()))?;
        let log = MetricsLog::from_csv(meta["log"].as_str().unwrap_or(""))?;
        Ok((m, cfg, log))
    }
}

/// The heatmap network of a landmark checkpoint, ready for inference.
pub fn load_g2(ck: &Checkpoint) -> Result<UNet<f32>> {
    expect_stage(ck, STAGE)?;
    let net = ck.net("g2")?;
    let mut g2 = UNet::new(serde_json::from_value(net.spec.clone())?, &mut ChaCha8Rng::seed_from_u64(0))?;
    net.restore(&mut g2.store, None)?;
    Ok(g2)
}

/// Training inputs of a landmark run.
#[derive(Clone, Copy, Debug)]
pub struct LandmarkData<'a> {
    /// Labelled images at the network's input resolution.
    pub labelled: &'a [FaceSample],
    /// Unlabelled real LR images (S4 only).
    pub real_lr: &'a [Tensor<f32>],
    /// Labelled set evaluated periodically into the log.
    pub monitor: Option<&'a [FaceSample]>,
}

/// Trains the landmark networks of `setting`.
pub fn train_landmarks(
    cfg: &TrainConfig,
    setting: Setting,
    data: LandmarkData<'_>,
    opts: &RunOptions,
) -> Result<(LandmarkModels, MetricsLog)> {
    cfg.validate()?;
    let first = data
        .labelled
        .first()
        .ok_or_else(|| Error::Input("no labelled training samples".into()))?;
    let k = first.keypoints();
    let side = match setting {
        Setting::HrLd => cfg.profile.hr_size(),
        _ => cfg.profile.lr_size(),
    };
    if let Some(s) = data.labelled.iter().find(|s| s.image.shape() != [3, side, side] || s.keypoints() != k) {
        return Err(Error::Shape(format!(
            "{setting} trains on 3×{side}×{side} images with {k} keypoints, got {:?} with {}",
            s.image.shape(),
            s.keypoints()
        )));
    }
    if setting.uses_d3() && data.real_lr.is_empty() {
        return Err(Error::Missing(format!("{setting} needs a pool of unlabelled real LR images")));
    }
    if let Some(t) = data.real_lr.iter().find(|t| t.shape() != [3, side, side]) {
        return Err(Error::Shape(format!("real LR images must be 3×{side}×{side}, got {:?}", t.shape())));
    }
    let per_epoch = cfg.iterations_per_epoch(data.labelled.len())?;
    let total = per_epoch * cfg.epochs as u64;
    let monitor_every = opts.monitor_every.unwrap_or(per_epoch).max(1);

    let (mut m, mut log) = match &opts.resume {
        Some(ck) => {
            let (m, _, log) = LandmarkModels::from_checkpoint(ck)?;
            if ck.metadata["config"] != serde_json::to_value(cfg)? || m.setting != setting {
                return Err(Error::Config("resumed checkpoint was trained with a different configuration".into()));
            }
            (m, log)
        }
        None => (LandmarkModels::new(cfg, setting, k)?, MetricsLog::new()),
    };
    let b = cfg.batch_size;
    let provenance = setting.provenance();
    let mut order: Option<(u64, Vec<usize>)> = None;
    while m.iteration < total {
        let it = m.iteration;
        let epoch = it / per_epoch;
        if order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            order = Some((epoch, epoch_order(cfg.seed, epoch, data.labelled.len())));
        }
        let idx = &order.as_ref().expect("set above").1;
        let pos = (it % per_epoch) as usize * b;
        let samples: Vec<FaceSample> = idx[pos..pos + b]
            .iter()
            .enumerate()
            .map(|(j, &i)| {
                let s = &data.labelled[i];
                if cfg.augment {
                    augment(s, derive_seed(cfg.seed, STREAM_AUGMENT, it * b as u64 + j as u64))
                } else {
                    s.clone()
                }
            })
            .collect();
        let batch = Batch::from_samples(&samples, provenance)?;
        let real = if setting.uses_d3() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_REAL, it));
            let pick: Vec<Tensor<f32>> = (0..b)
                .map(|_| data.real_lr[rng.random_range(0..data.real_lr.len())].clone())
                .collect();
            Some(Tensor::stack(&pick)?)
        } else {
            None
        };
        let lr = lr_schedule(cfg, epoch as usize);
        let l = match m.step(&batch, real.as_ref(), lr, &cfg.weights) {
            Ok(l) => l,
            Err(e) => return Err(with_snapshot(e, opts, || m.to_checkpoint(cfg, &log))),
        };
        let n = m.iteration;
        log.push(n, "mse", l.mse)?;
        for (name, v) in [
            ("kp", l.kp),
            ("conf", l.conf),
            ("d2_loss", l.d2_loss),
            ("l_real", l.l_real),
            ("l_fake", l.l_fake),
            ("k", l.k),
            ("d3_loss", l.d3_loss),
        ] {
            if let Some(v) = v {
                log.push(n, name, v)?;
            }
        }
        log.push(n, "g_total", l.g_total)?;
        log.push(n, "lr", lr)?;
        let mut stop = opts.stop_after.is_some_and(|s| n >= s);
        if let Some(mon) = data.monitor {
            if n % monitor_every == 0 || n == total {
                let e = evaluate_model(&mut m.g2, mon, Normalizer::Bbox, setting.name())?;
                log::info!(
                    "{setting} iteration {n}/{total}: mse {:.4}, monitored NRMSE {:.4}",
                    l.mse,
                    e.summary.nrmse_mean
                );
                log.push(n, "val_nrmse", e.summary.nrmse_mean)?;
                log.push(n, "val_auc_0.07", e.summary.auc_007)?;
                stop |= opts.stop_below.is_some_and(|t| e.summary.nrmse_mean < t);
            }
        }
        if let Some(dir) = &opts.out_dir {
            if cfg.checkpoint_every > 0 && n % cfg.checkpoint_every == 0 {
                m.to_checkpoint(cfg, &log)?.save(&dir.join(checkpoint_name(setting)))?;
            }
        }
        if stop {
            break;
        }
    }
    if let Some(dir) = &opts.out_dir {
        m.to_checkpoint(cfg, &log)?.save(&dir.join(checkpoint_name(setting)))?;
        log.save(&dir.join(format!("{}_log.csv", setting.name().to_ascii_lowercase())))?;
    }
    Ok((m, log))
}

/// `s1.ckpt`, …, `hr-ld.ckpt`.
pub fn checkpoint_name(setting: Setting) -> String {
    format!("{}.ckpt", setting.name().to_ascii_lowercase())
}

/// LR source of the supervised settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetMode {
    /// Clean smoothing and pooling of the HR images (S1).
    Subsampled,
    /// Outputs of a frozen high-to-low generator (S2).
    Generated,
}

/// S1 or S2: G2 alone, regression loss only, on LR versions of `hr_train`.
pub fn train_landmark_supervised(
    cfg: &TrainConfig,
    mode: DatasetMode,
    hr_train: &[FaceSample],
    g1: Option<&mut G1<f32>>,
    monitor: Option<&[FaceSample]>,
    opts: &RunOptions,
) -> Result<(LandmarkModels, MetricsLog)> {
    let (setting, labelled) = match mode {
        DatasetMode::Subsampled => (Setting::S1, subsampled_split(hr_train, cfg.profile.factor())?),
        DatasetMode::Generated => {
            let g1 = g1.ok_or_else(|| Error::Missing("S2 needs a trained high-to-low generator".into()))?;
            (Setting::S2, generate_lr_split(g1, hr_train, cfg.seed)?)
        }
    };
    let data = LandmarkData {
        labelled: &labelled,
        real_lr: &[],
        monitor,
    };
    train_landmarks(cfg, setting, data, opts)
}

/// S3 (`use_d3 = false`) or S4: adversarial training on generated LR samples.
pub fn train_landmark_adversarial(
    cfg: &TrainConfig,
    use_d3: bool,
    generated: &[FaceSample],
    real_lr: Option<&[Tensor<f32>]>,
    monitor: Option<&[FaceSample]>,
    opts: &RunOptions,
) -> Result<(LandmarkModels, MetricsLog)> {
    let setting = if use_d3 { Setting::S4 } else { Setting::S3 };
    if use_d3 && real_lr.is_none_or(|r| r.is_empty()) {
        return Err(Error::Missing("S4 needs a pool of unlabelled real LR images".into()));
    }
    let data = LandmarkData {
        labelled: generated,
        real_lr: if use_d3 { real_lr.unwrap_or(&[]) } else { &[] },
        monitor,
    };
    train_landmarks(cfg, setting, data, opts)
}

/// Supervised heatmap regression directly on HR images.
pub fn train_hr_ld(
    cfg: &TrainConfig,
    hr: &[FaceSample],
    monitor: Option<&[FaceSample]>,
    opts: &RunOptions,
) -> Result<(LandmarkModels, MetricsLog)> {
    let data = LandmarkData {
        labelled: hr,
        real_lr: &[],
        monitor,
    };
    train_landmarks(cfg, Setting::HrLd, data, opts)
}
