//! Parameters and the layer set the five networks are built from.

mod layers;
pub mod spectral;

pub use layers::{BatchNorm, Conv, Linear, ResidualBlock};
pub use spectral::{converge_power_iteration, power_iteration, spectral_normalize, SpectralState};

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A learnable tensor with its gradient accumulator and Adam moments.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
        }
    }
}

/// Non-learnable state: running batch-norm statistics, power-iteration vectors.
#[derive(Clone, Debug)]
pub struct Buffer<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BufferId(usize);

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

/// Owns every parameter and buffer of one network.
#[derive(Debug)]
pub struct ParamStore<T> {
    uid: u64,
    params: Vec<Parameter<T>>,
    buffers: Vec<Buffer<T>>,
}

impl<T: Real> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        ParamStore {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: self.params.clone(),
            buffers: self.buffers.clone(),
        }
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> BufferId {
        self.buffers.push(Buffer {
            name: name.into(),
            value,
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0].value
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor<T> {
        &mut self.buffers[id.0].value
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Buffer<T>] {
        &mut self.buffers
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Places parameter `id` on the tape.
    pub fn var(&self, g: &mut Graph<T>, id: ParamId) -> Var {
        g.param(self.uid, id.0, self.params[id.0].value.clone())
    }

    /// Adds the gradients this store's parameters received on `g`.
    pub fn collect_grads(&mut self, g: &Graph<T>) -> Result<()> {
        for (index, grad) in g.param_grads(self.uid) {
            self.params[index].grad.add_assign(grad)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Copies values (and buffers) from a store with the same layout.
    pub fn copy_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.params.len() != other.params.len() || self.buffers.len() != other.buffers.len() {
            return Err(Error::Shape("parameter stores have different layouts".into()));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.value.expect_same_shape(&b.value)?;
            a.value = b.value.clone();
        }
        for (a, b) in self.buffers.iter_mut().zip(&other.buffers) {
            a.value.expect_same_shape(&b.value)?;
            a.value = b.value.clone();
        }
        Ok(())
    }
}

/// How freshly created weights are drawn.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum InitScheme {
    /// `U(−√(6/fan_in), √(6/fan_in))`.
    FanInUniform,
    Zeros,
}

/// Registers layers into a store, drawing initial weights from a seeded stream.
pub struct Builder<'a, T> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut ChaCha8Rng,
    pub scheme: InitScheme,
    prefix: String,
}

impl<'a, T: Real> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Builder {
            store,
            rng,
            scheme: InitScheme::FanInUniform,
            prefix: String::new(),
        }
    }

    pub fn name(&self, local: &str) -> String {
        if self.prefix.is_empty() {
            local.to_string()
        } else {
            format!("{}.{}", self.prefix, local)
        }
    }

    /// Runs `f` with `local` appended to the name prefix.
    pub fn scoped<R>(&mut self, local: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        let saved = self.prefix.clone();
        self.prefix = self.name(local);
        let r = f(self);
        self.prefix = saved;
        r
    }

    pub fn weight(&mut self, local: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let value = match self.scheme {
            InitScheme::Zeros => Tensor::zeros(shape),
            InitScheme::FanInUniform => {
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                let rng = &mut *self.rng;
                Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..bound)))
            }
        };
        let name = self.name(local);
        self.store.add_param(name, value)
    }

    pub fn constant(&mut self, local: &str, shape: &[usize], value: f64) -> ParamId {
        let name = self.name(local);
        self.store.add_param(name, Tensor::full(shape, T::lit(value)))
    }

    pub fn buffer(&mut self, local: &str, value: Tensor<T>) -> BufferId {
        let name = self.name(local);
        self.store.add_buffer(name, value)
    }
}
