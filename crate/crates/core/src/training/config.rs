use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{BalanceState, LossWeights};
use crate::networks::Profile;
use crate::optim::OptimizerConfig;

/// Schedule, optimiser and objective settings shared by every training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub profile: Profile,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Fractions of `epochs` after which the learning rate is multiplied by `drop_factor`.
    pub drop_fractions: Vec<f64>,
    pub drop_factor: f64,
    pub weights: LossWeights,
    pub balance: BalanceState,
    pub seed: u64,
    /// Random similarity warps on the labelled training images.
    pub augment: bool,
    /// Iterations between resumable checkpoints (0: only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Desk)
    }
}

impl TrainConfig {
    /// Desk: 50 epochs of batch 8. Full: 200 epochs of batch 32.
    pub fn for_profile(profile: Profile) -> Self {
        let (epochs, batch_size) = match profile {
            Profile::Desk => (50, 8),
            Profile::Full => (200, 32),
        };
        TrainConfig {
            profile,
            epochs,
            batch_size,
            optimizer: OptimizerConfig::default(),
            drop_fractions: vec![0.4, 0.8],
            drop_factor: 0.5,
            weights: LossWeights::default(),
            balance: BalanceState::default(),
            seed: 0,
            augment: true,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch size must be at least 2, got {}", self.batch_size)));
        }
        if self.epochs < 1 {
            return Err(Error::Config("at least one epoch is required".into()));
        }
        if let Some(f) = self.drop_fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
            return Err(Error::Config(format!("learning-rate drop fraction {f} is outside (0, 1)")));
        }
        if !(self.drop_factor > 0.0 && self.drop_factor <= 1.0) {
            return Err(Error::Config(format!("drop factor {} is outside (0, 1]", self.drop_factor)));
        }
        self.optimizer.validate()?;
        self.weights.validate()?;
        self.balance.validate()
    }

    /// Epochs at which the learning rate drops.
    pub fn drop_epochs(&self) -> Vec<usize> {
        self.drop_fractions
            .iter()
            .map(|f| (f * self.epochs as f64).round() as usize)
            .collect()
    }

    /// Optimisation steps per epoch for a pool of `n` samples; a trailing
    /// partial batch is dropped.
    pub fn iterations_per_epoch(&self, n: usize) -> Result<u64> {
        if n < self.batch_size {
            return Err(Error::Input(format!(
                "{n} training samples cannot fill a batch of {}",
                self.batch_size
            )));
        }
        Ok((n / self.batch_size) as u64)
    }
}

/// Base rate times `drop_factor` for every drop epoch already reached.
pub fn lr_schedule(config: &TrainConfig, epoch: usize) -> f64 {
    let passed = config.drop_epochs().iter().filter(|&&d| epoch >= d).count();
    config.optimizer.learning_rate * config.drop_factor.powi(passed as i32)
}
