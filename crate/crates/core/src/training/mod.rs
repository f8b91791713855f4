//! The two training stages, the role-switching protocol and the S1–S4 ablation.
//!
//! Every random choice (batch order, noise, augmentation, real-LR draws) is a
//! pure function of the configured seed and the iteration index, so a run
//! resumed from a checkpoint continues exactly as the uninterrupted run would.

mod ablation;
mod config;
mod high_to_low;
mod landmark;
mod log;

pub use ablation::{run_ablation, AblationConfig, AblationOutcome, AblationReport};
pub use config::{lr_schedule, TrainConfig};
pub use high_to_low::{generate_lr_split, load_g1, train_high_to_low, H2lLosses, HighToLow};
pub use landmark::{
    checkpoint_name, load_g2, train_hr_ld, train_landmark_adversarial, train_landmark_supervised, train_landmarks, Batch, DatasetMode,
    LandmarkData, LandmarkLosses, LandmarkModels, Provenance, Setting,
};
pub use log::{LogRecord, MetricsLog};

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Graph, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::synth::derive_seed;
use crate::tensor::Tensor;

const STREAM_ORDER: u64 = 101;
const STREAM_REAL: u64 = 102;
const STREAM_NOISE: u64 = 103;
const STREAM_AUGMENT: u64 = 104;
const STREAM_INIT: u64 = 105;
const STREAM_GENERATE: u64 = 106;

/// Run-time controls that do not change what a step computes.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Checkpoints (`checkpoint_every`, final) and divergence snapshots go here.
    pub out_dir: Option<PathBuf>,
    /// Continue from this checkpoint instead of a fresh initialisation.
    pub resume: Option<Checkpoint>,
    /// Stop once this many iterations are done (a simulated interruption).
    pub stop_after: Option<u64>,
    /// Stop once the monitored NRMSE falls below this value.
    pub stop_below: Option<f64>,
    /// Iterations between monitor evaluations (default: once per epoch).
    pub monitor_every: Option<u64>,
}

/// Shuffled sample order of one epoch.
pub(crate) fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_ORDER, epoch)));
    idx
}

/// Standard normal noise rows, row `i` drawn from its own stream `first + i`.
pub(crate) fn noise_rows(seed: u64, stream: u64, first: u64, rows: usize, len: usize) -> Tensor<f32> {
    let mut data = Vec::with_capacity(rows * len);
    for i in 0..rows as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, first + i));
        data.extend((0..len).map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v as f32
        }));
    }
    Tensor::from_vec(&[rows, len], data).expect("sized")
}

/// Scalar value of a loss, or a divergence error naming it.
pub(crate) fn checked(g: &Graph<f32>, v: Var, iteration: u64, name: &str) -> Result<f64> {
    let x = g.value(v).data()[0] as f64;
    if !x.is_finite() {
        return Err(Error::Diverged {
            iteration,
            loss: name.to_string(),
            value: x,
            snapshot: None,
        });
    }
    Ok(x)
}

/// Saves `ck` next to the run outputs and attaches its path to a divergence error.
pub(crate) fn with_snapshot(err: Error, opts: &RunOptions, ck: impl FnOnce() -> Result<Checkpoint>) -> Error {
    match err {
        Error::Diverged {
            iteration,
            loss,
            value,
            snapshot: None,
        } => {
            let snapshot = opts.out_dir.as_ref().and_then(|dir| {
                let path = dir.join(format!("diverged-{iteration}.ckpt"));
                ck().and_then(|c| c.save(&path)).ok().map(|_| path)
            });
            Error::Diverged {
                iteration,
                loss,
                value,
                snapshot,
            }
        }
        other => other,
    }
}
