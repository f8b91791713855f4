//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !(self.learning_rate > 0.0) || !beta_ok(self.beta1) || !beta_ok(self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Optimizer state shared by every parameter of one network. Moments live on
/// the parameters themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: OptimizerConfig,
    pub step: u64,
}

impl Adam {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam { config, step: 0 })
    }

    /// One update of every parameter in `store` at learning rate `lr`, then
    /// clears the gradients.
    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let step_size = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(c.eps);
        for p in store.params_mut() {
            let n = p.value.numel();
            let (val, grad) = (p.value.data_mut(), p.grad.data());
            let (m, v) = (p.m.data_mut(), p.v.data_mut());
            for i in 0..n {
                let g = grad[i];
                m[i] = b1 * m[i] + one_b1 * g;
                v[i] = b2 * v[i] + one_b2 * g * g;
                val[i] -= step_size * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
            }
        }
        store.zero_grads();
    }
}
