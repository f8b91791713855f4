//! SVD oracle for spectrally normalised discriminators.

use lowres_landmarks::autodiff::Graph;
use lowres_landmarks::losses::hinge_d;
use lowres_landmarks::networks::{DiscSpec, Discriminator, Profile};
use lowres_landmarks::nn::{Mode, ParamStore};
use lowres_landmarks::optim::{Adam, OptimizerConfig};
use lowres_landmarks::{Result, Tensor};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-3;
pub const STEPS: usize = 500;
/// Iteration cap when converging the estimates before the oracle check.
pub const CONVERGE: usize = 5000;

/// Largest singular value of the `out × rest` view of `w`.
pub fn top_singular_value(w: &Tensor<f32>) -> f64 {
    let rows = w.shape()[0];
    let cols = w.numel() / rows;
    let m = DMatrix::from_row_iterator(rows, cols, w.data().iter().map(|&v| v as f64));
    m.singular_values().max()
}

/// Worst `|σ₁ − 1|` over every normalised weight, with its name.
pub fn worst_deviation(d: &Discriminator<f32>) -> (String, f64) {
    d.normalized_weights()
        .into_iter()
        .map(|(name, w)| (name, (top_singular_value(&w) - 1.0).abs()))
        .fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a })
}

pub fn discriminators(seed: u64) -> Result<Vec<(&'static str, Discriminator<f32>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        ("D1", Discriminator::new(DiscSpec::d1(Profile::Desk), &mut rng)?),
        ("D3", Discriminator::new(DiscSpec::d3(Profile::Desk, 5), &mut rng)?),
    ])
}

fn batch(rng: &mut ChaCha8Rng, spec: &DiscSpec, n: usize, offset: f32) -> Tensor<f32> {
    Tensor::from_fn(&[n, spec.in_channels, spec.size, spec.size], |_| {
        rng.random_range(-1.0f32..1.0) * 0.5 + offset
    })
}

/// Hinge training against two fixed-offset noise distributions.
pub fn train(d: &mut Discriminator<f32>, steps: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Adam::new(OptimizerConfig::default())?;
    let spec = d.spec.clone();
    for _ in 0..steps {
        let mut g = Graph::new();
        let real = g.constant(batch(&mut rng, &spec, 4, 0.3));
        let fake = g.constant(batch(&mut rng, &spec, 4, -0.3));
        let sr = d.forward(&mut g, real, Mode::Train)?;
        let sf = d.forward(&mut g, fake, Mode::Train)?;
        let l = hinge_d(&mut g, sr, sf)?;
        g.backward(l)?;
        let store: &mut ParamStore<f32> = &mut d.store;
        store.collect_grads(&g)?;
        opt.step(store, OptimizerConfig::default().learning_rate);
    }
    Ok(())
}
