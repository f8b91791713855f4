use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

use super::spectral::{converge_power_iteration, matrix_dims, power_iteration, SpectralState};
use super::{Builder, BufferId, Mode, ParamId, ParamStore};

/// Power-iteration settings attached to a spectrally normalised weight.
#[derive(Clone, Copy, Debug)]
pub struct Spectral {
    pub u: BufferId,
    pub iterations: usize,
}

/// Iteration cap when converging a fresh `u` at construction.
const SPECTRAL_WARMUP: usize = 5000;

fn new_spectral<T: Real>(b: &mut Builder<'_, T>, weight: ParamId, iterations: usize) -> Spectral {
    let w = b.store.param(weight).value.clone();
    let (rows, cols) = matrix_dims(&w).expect("weight has a leading axis");
    let mut st = SpectralState::random(rows, 1, b.rng);
    converge_power_iteration(w.data(), rows, cols, &mut st.u, SPECTRAL_WARMUP);
    let u = b.buffer("sn_u", Tensor::from_vec(&[rows], st.u).expect("rows"));
    Spectral { u, iterations }
}

/// Puts `weight` on the tape, normalised by its spectral norm when `spectral`
/// is set. `u` advances only in training mode.
fn weight_var<T: Real>(
    g: &mut Graph<T>,
    store: &mut ParamStore<T>,
    weight: ParamId,
    spectral: Option<Spectral>,
    mode: Mode,
) -> Var {
    let w = store.var(g, weight);
    let Some(sn) = spectral else {
        return w;
    };
    let value = g.value(w);
    let (rows, cols) = matrix_dims(value).expect("weight has a leading axis");
    let mut u = store.buffer(sn.u).data().to_vec();
    let iterations = if mode == Mode::Train { sn.iterations } else { 0 };
    let (v, sigma) = power_iteration(value.data(), rows, cols, &mut u, iterations);
    if mode == Mode::Train {
        store.buffer_mut(sn.u).data_mut().copy_from_slice(&u);
    }
    g.spectral_norm(w, u, v, sigma)
}

/// Runs the persistent estimate of `weight` to convergence.
fn converge_spectral<T: Real>(store: &mut ParamStore<T>, weight: ParamId, spectral: Option<Spectral>, max: usize) {
    if let Some(sn) = spectral {
        let w = store.param(weight).value.clone();
        let (rows, cols) = matrix_dims(&w).expect("weight has a leading axis");
        converge_power_iteration(w.data(), rows, cols, store.buffer_mut(sn.u).data_mut(), max);
    }
}

/// Normalised weight as used by the forward pass, without touching `u`.
pub(crate) fn normalized_weight<T: Real>(store: &ParamStore<T>, weight: ParamId, spectral: Option<Spectral>) -> Tensor<T> {
    let w = &store.param(weight).value;
    match spectral {
        None => w.clone(),
        Some(sn) => {
            let (rows, cols) = matrix_dims(w).expect("weight has a leading axis");
            let mut u = store.buffer(sn.u).data().to_vec();
            let (_, sigma) = power_iteration(w.data(), rows, cols, &mut u, 0);
            if sigma > T::zero() {
                w.map(|x| x / sigma)
            } else {
                Tensor::zeros(w.shape())
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
    pub spectral: Option<Spectral>,
}

impl Conv {
    /// Square `k×k` convolution with "same" padding for odd `k`.
    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, cin: usize, cout: usize, k: usize, bias: bool) -> Self {
        b.scoped(name, |b| {
            let weight = b.weight("weight", &[cout, cin, k, k], cin * k * k);
            let bias = bias.then(|| b.constant("bias", &[cout], 0.0));
            Conv {
                weight,
                bias,
                stride: 1,
                padding: k / 2,
                spectral: None,
            }
        })
    }

    pub fn with_spectral<T: Real>(mut self, b: &mut Builder<'_, T>, name: &str, iterations: usize) -> Self {
        let weight = self.weight;
        self.spectral = Some(b.scoped(name, |b| new_spectral(b, weight, iterations)));
        self
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let w = weight_var(g, store, self.weight, self.spectral, mode);
        let b = self.bias.map(|b| store.var(g, b));
        g.conv2d(x, w, b, self.stride, self.padding)
    }

    pub fn normalized_weight<T: Real>(&self, store: &ParamStore<T>) -> Tensor<T> {
        normalized_weight(store, self.weight, self.spectral)
    }

    /// Converges the spectral estimate (no-op without spectral normalisation).
    pub fn converge_spectral<T: Real>(&self, store: &mut ParamStore<T>, max_iterations: usize) {
        converge_spectral(store, self.weight, self.spectral, max_iterations)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spectral: Option<Spectral>,
}

impl Linear {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, fin: usize, fout: usize, bias: bool) -> Self {
        b.scoped(name, |b| {
            let weight = b.weight("weight", &[fout, fin], fin);
            let bias = bias.then(|| b.constant("bias", &[fout], 0.0));
            Linear {
                weight,
                bias,
                spectral: None,
            }
        })
    }

    pub fn with_spectral<T: Real>(mut self, b: &mut Builder<'_, T>, name: &str, iterations: usize) -> Self {
        let weight = self.weight;
        self.spectral = Some(b.scoped(name, |b| new_spectral(b, weight, iterations)));
        self
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let w = weight_var(g, store, self.weight, self.spectral, mode);
        let b = self.bias.map(|b| store.var(g, b));
        g.linear(x, w, b)
    }

    pub fn normalized_weight<T: Real>(&self, store: &ParamStore<T>) -> Tensor<T> {
        normalized_weight(store, self.weight, self.spectral)
    }

    /// Converges the spectral estimate (no-op without spectral normalisation).
    pub fn converge_spectral<T: Real>(&self, store: &mut ParamStore<T>, max_iterations: usize) {
        converge_spectral(store, self.weight, self.spectral, max_iterations)
    }
}

/// Running-average weight of the previous estimate.
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct BatchNorm {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Self {
        b.scoped(name, |b| BatchNorm {
            scale: b.constant("scale", &[channels], 1.0),
            shift: b.constant("shift", &[channels], 0.0),
            running_mean: b.buffer("running_mean", Tensor::zeros(&[channels])),
            running_var: b.buffer("running_var", Tensor::full(&[channels], T::one())),
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let scale = store.var(g, self.scale);
        let shift = store.var(g, self.shift);
        let eps = T::lit(BN_EPS);
        match mode {
            Mode::Train => {
                let (y, mean, var) = g.batch_norm_train(x, scale, shift, eps)?;
                let shape = g.value(x).shape().to_vec();
                let count = shape[0] * shape[2] * shape[3];
                let unbias = T::lit(count as f64 / (count as f64 - 1.0).max(1.0));
                let mom = T::lit(BN_MOMENTUM);
                let rm = store.buffer_mut(self.running_mean).data_mut();
                for (r, m) in rm.iter_mut().zip(&mean) {
                    *r = mom * *r + (T::one() - mom) * *m;
                }
                let rv = store.buffer_mut(self.running_var).data_mut();
                for (r, v) in rv.iter_mut().zip(&var) {
                    *r = mom * *r + (T::one() - mom) * *v * unbias;
                }
                Ok(y)
            }
            Mode::Eval => {
                let mean = store.buffer(self.running_mean).data().to_vec();
                let var = store.buffer(self.running_var).data().to_vec();
                g.batch_norm_eval(x, scale, shift, &mean, &var, eps)
            }
        }
    }
}

/// `relu(F(x) + shortcut(x))` with `F = norm∘conv → relu → norm∘conv`; the
/// shortcut is a 1×1 projection when the channel count changes.
#[derive(Clone, Copy, Debug)]
pub struct ResidualBlock {
    pub conv1: Conv,
    pub norm1: Option<BatchNorm>,
    pub conv2: Conv,
    pub norm2: Option<BatchNorm>,
    pub projection: Option<Conv>,
}

impl ResidualBlock {
    /// `spectral` replaces batch normalisation with spectrally normalised weights.
    pub fn new<T: Real>(
        b: &mut Builder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        spectral: Option<usize>,
    ) -> Self {
        b.scoped(name, |b| {
            let bias = spectral.is_some();
            let mut conv1 = Conv::new(b, "conv1", cin, cout, 3, bias);
            let mut conv2 = Conv::new(b, "conv2", cout, cout, 3, bias);
            let mut projection = (cin != cout).then(|| Conv::new(b, "proj", cin, cout, 1, bias));
            let (norm1, norm2) = match spectral {
                Some(it) => {
                    conv1 = conv1.with_spectral(b, "conv1", it);
                    conv2 = conv2.with_spectral(b, "conv2", it);
                    projection = projection.map(|p| p.with_spectral(b, "proj", it));
                    (None, None)
                }
                None => (Some(BatchNorm::new(b, "bn1", cout)), Some(BatchNorm::new(b, "bn2", cout))),
            };
            ResidualBlock {
                conv1,
                norm1,
                conv2,
                norm2,
                projection,
            }
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let mut h = self.conv1.forward(g, store, x, mode)?;
        if let Some(n) = self.norm1 {
            h = n.forward(g, store, h, mode)?;
        }
        h = g.relu(h);
        h = self.conv2.forward(g, store, h, mode)?;
        if let Some(n) = self.norm2 {
            h = n.forward(g, store, h, mode)?;
        }
        let skip = match self.projection {
            Some(p) => p.forward(g, store, x, mode)?,
            None => x,
        };
        let sum = g.add(h, skip)?;
        Ok(g.relu(sum))
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv> {
        [&self.conv1, &self.conv2].into_iter().chain(self.projection.as_ref())
    }
}
