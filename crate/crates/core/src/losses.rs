//! Adversarial, reconstruction and regression objectives, all built on the tape
//! so they can be differentiated, plus the boundary-equilibrium controller.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::networks::UNet;
use crate::nn::Mode;
use crate::tensor::Real;

/// Coefficients of the two generator objectives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// GAN term of the high-to-low objective.
    pub alpha: f64,
    /// Pixel term of the high-to-low objective.
    pub beta: f64,
    /// Heatmap regression term.
    pub a: f64,
    /// Autoencoder (keypoint adversarial) term.
    pub b: f64,
    /// Confidence term.
    pub c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 0.1,
            a: 1.0,
            b: 0.1,
            c: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.a, self.b, self.c];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// The `k_t` controller balancing real reconstruction against fake anti-reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceState {
    pub k: f64,
    pub lambda_k: f64,
    pub gamma: f64,
    /// Iterations between updates.
    pub t_update: u64,
}

impl Default for BalanceState {
    fn default() -> Self {
        BalanceState {
            k: 0.0,
            lambda_k: 0.001,
            gamma: 0.5,
            t_update: 1,
        }
    }
}

impl BalanceState {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.k)
            && self.lambda_k > 0.0
            && self.gamma > 0.0
            && self.gamma <= 1.0
            && self.t_update >= 1;
        if !ok {
            return Err(Error::Config(format!("invalid balance state {self:?}")));
        }
        Ok(())
    }

    /// `k ← clamp(k + λ_k(γ·l_real − l_fake), 0, 1)`.
    pub fn updated(self, l_real: f64, l_fake: f64) -> Self {
        let k = (self.k + self.lambda_k * (self.gamma * l_real - l_fake)).clamp(0.0, 1.0);
        BalanceState { k, ..self }
    }

    /// Applies [`Self::updated`] when `iteration` (1-based) falls on the update period.
    pub fn step(&mut self, iteration: u64, l_real: f64, l_fake: f64) {
        if iteration % self.t_update == 0 {
            *self = self.updated(l_real, l_fake);
        }
    }
}

fn non_empty<T: Real>(g: &Graph<T>, v: Var, what: &str) -> Result<()> {
    if g.value(v).numel() == 0 {
        return Err(Error::Input(format!("{what}: empty batch")));
    }
    Ok(())
}

/// `mean(relu(1 − real)) + mean(relu(1 + fake))`, minimised by the discriminator.
pub fn hinge_d<T: Real>(g: &mut Graph<T>, real: Var, fake: Var) -> Result<Var> {
    non_empty(g, real, "hinge_d real scores")?;
    non_empty(g, fake, "hinge_d fake scores")?;
    let r = g.affine(real, -T::one(), T::one());
    let r = g.relu(r);
    let r = g.mean(r);
    let f = g.affine(fake, T::one(), T::one());
    let f = g.relu(f);
    let f = g.mean(f);
    g.add(r, f)
}

/// `−mean(fake)`.
pub fn hinge_g<T: Real>(g: &mut Graph<T>, fake: Var) -> Result<Var> {
    non_empty(g, fake, "hinge_g fake scores")?;
    let m = g.mean(fake);
    Ok(g.scale(m, -T::one()))
}

/// Mean squared difference over every element.
pub fn pixel_l2<T: Real>(g: &mut Graph<T>, generated: Var, target: Var) -> Result<Var> {
    let d = g.sub(generated, target)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// `α·l_gan + β·l_pixel`.
pub fn h2l_total<T: Real>(g: &mut Graph<T>, l_gan: Var, l_pixel: Var, w: &LossWeights) -> Result<Var> {
    let a = g.scale(l_gan, T::lit(w.alpha));
    let b = g.scale(l_pixel, T::lit(w.beta));
    g.add(a, b)
}

/// Squared error summed over channels, averaged over batch and pixels.
pub fn heatmap_error<T: Real>(g: &mut Graph<T>, target: Var, pred: Var) -> Result<Var> {
    let (_, c, _, _) = g.value(target).dims4()?;
    let (_, c2, _, _) = g.value(pred).dims4()?;
    if c != c2 {
        return Err(Error::Shape(format!("heatmap stacks have {c} and {c2} channels")));
    }
    let d = g.sub(target, pred)?;
    let sq = g.square(d);
    let m = g.mean(sq);
    Ok(g.scale(m, T::lit(c as f64)))
}

/// `l_real − k·l_fake`.
pub fn began_d<T: Real>(g: &mut Graph<T>, l_real: Var, l_fake: Var, k: f64) -> Result<Var> {
    let f = g.scale(l_fake, T::lit(k));
    g.sub(l_real, f)
}

/// Autoencoder losses of D2 on ground-truth and predicted heatmaps.
pub struct BeganTerms {
    pub l_real: Var,
    pub l_fake: Var,
    pub l_d: Var,
}

/// Runs D2 on `(gt, image)` and `(pred, image)` and forms the discriminator objective.
pub fn began_losses<T: Real>(
    g: &mut Graph<T>,
    d2: &mut UNet<T>,
    gt: Var,
    pred: Var,
    image: Var,
    k: f64,
    mode: Mode,
) -> Result<BeganTerms> {
    let rec_real = d2.forward_pair(g, gt, image, mode)?;
    let l_real = heatmap_error(g, gt, rec_real)?;
    let rec_fake = d2.forward_pair(g, pred, image, mode)?;
    let l_fake = heatmap_error(g, pred, rec_fake)?;
    let l_d = began_d(g, l_real, l_fake, k)?;
    Ok(BeganTerms { l_real, l_fake, l_d })
}

fn mean_sq_offset<T: Real>(g: &mut Graph<T>, x: Var, target: f64) -> Var {
    let d = g.affine(x, T::one(), T::lit(-target));
    let sq = g.square(d);
    g.mean(sq)
}

/// Least-squares confidence discriminator objective over its three input streams.
pub fn lsgan_d3<T: Real>(g: &mut Graph<T>, real: Var, fake_generated: Var, fake_real_lr: Var) -> Result<Var> {
    for (v, what) in [(real, "real"), (fake_generated, "generated"), (fake_real_lr, "real-LR")] {
        non_empty(g, v, &format!("lsgan_d3 {what} scores"))?;
    }
    let r = mean_sq_offset(g, real, 1.0);
    let a = mean_sq_offset(g, fake_generated, 0.0);
    let b = mean_sq_offset(g, fake_real_lr, 0.0);
    let s = g.add(r, a)?;
    g.add(s, b)
}

/// `(D3 − 1)²` averaged over every score of every fake stream.
pub fn lsgan_conf<T: Real>(g: &mut Graph<T>, fakes: &[Var]) -> Result<Var> {
    let total: usize = fakes.iter().map(|&v| g.value(v).numel()).sum();
    if total == 0 {
        return Err(Error::Input("lsgan_conf: no fake scores".into()));
    }
    let mut acc: Option<Var> = None;
    for &v in fakes {
        let d = g.affine(v, T::one(), -T::one());
        let sq = g.square(d);
        let s = g.sum(sq);
        acc = Some(match acc {
            Some(a) => g.add(a, s)?,
            None => s,
        });
    }
    Ok(g.scale(acc.expect("non-empty"), T::lit(1.0 / total as f64)))
}

/// `a·l_mse + b·l_kp + c·l_conf`; absent terms count as zero.
pub fn g2_total<T: Real>(
    g: &mut Graph<T>,
    l_mse: Var,
    l_kp: Option<Var>,
    l_conf: Option<Var>,
    w: &LossWeights,
) -> Result<Var> {
    let mut total = g.scale(l_mse, T::lit(w.a));
    if let Some(kp) = l_kp {
        let t = g.scale(kp, T::lit(w.b));
        total = g.add(total, t)?;
    }
    if let Some(conf) = l_conf {
        let t = g.scale(conf, T::lit(w.c));
        total = g.add(total, t)?;
    }
    Ok(total)
}

/// The heatmap generator objective with each component exposed.
pub struct G2Terms {
    pub mse: Var,
    pub kp: Option<Var>,
    pub conf: Option<Var>,
    pub total: Var,
}

/// Builds the generator objective from ground truth, prediction, an optional
/// D2 (whose reconstruction error on the prediction the generator wants small)
/// and D3 scores on every fake stream.
pub fn g2_objective<T: Real>(
    g: &mut Graph<T>,
    gt: Var,
    pred: Var,
    image: Var,
    d2: Option<&mut UNet<T>>,
    d3_fake_scores: &[Var],
    w: &LossWeights,
    mode: Mode,
) -> Result<G2Terms> {
    let mse = heatmap_error(g, gt, pred)?;
    let kp = match d2 {
        Some(d2) => {
            let rec = d2.forward_pair(g, pred, image, mode)?;
            Some(heatmap_error(g, pred, rec)?)
        }
        None => None,
    };
    let conf = if d3_fake_scores.is_empty() {
        None
    } else {
        Some(lsgan_conf(g, d3_fake_scores)?)
    };
    let total = g2_total(g, mse, kp, conf, w)?;
    Ok(G2Terms { mse, kp, conf, total })
}
