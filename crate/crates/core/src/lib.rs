//! Facial landmark localization directly on low-resolution images, learned
//! from labelled high-resolution faces without any low-resolution labels.
//!
//! The pipeline has two stages:
//!
//! 1. A high-to-low generator (`G1`) learns, unpaired, to turn HR faces into
//!    images that look like a pool of real LR faces; a spectrally normalised
//!    hinge discriminator (`D1`) judges realism and an L2 term against a
//!    smoothed-and-pooled copy of the HR input keeps the content.
//! 2. A U-Net heatmap generator (`G2`) is trained on the *generated* LR images,
//!    whose landmarks are the downsampled HR annotations. An autoencoding
//!    discriminator (`D2`) balanced by a BEGAN-style controller judges heatmap
//!    plausibility, and a least-squares confidence discriminator (`D3`) also
//!    sees heatmaps predicted for unlabelled real LR images.
//!
//! Everything runs on a small, self-contained numeric core ([`autodiff`],
//! [`nn`], [`optim`]) and a procedural face generator ([`synth`]) that
//! provides exact ground truth for both LR domains. [`eval`] holds the metric
//! suite (NRMSE, AUC, CED) and canonical alignment, and [`training`] the two
//! stages plus the S1–S4 ablation ladder.
//!
//! See the crate's `examples/` directory for one runnable program per
//! capability, and the `lrlm` binary for the batch command-line surface.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod networks;
pub mod nn;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod training;
pub mod viz;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
