//! Spectral normalisation by power iteration on the `out × rest` view of a weight.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Persistent left singular vector estimate of one weight.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState<T> {
    pub u: Vec<T>,
    /// Power-iteration steps per update.
    pub iterations: usize,
}

impl<T: Real> SpectralState<T> {
    pub fn random(rows: usize, iterations: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut u: Vec<T> = (0..rows)
            .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        if normalize(&mut u) == T::zero() {
            u[0] = T::one();
        }
        SpectralState {
            u,
            iterations: iterations.max(1),
        }
    }
}

fn normalize<T: Real>(x: &mut [T]) -> T {
    let n = x.iter().map(|&v| v * v).sum::<T>().sqrt();
    if n > T::zero() {
        x.iter_mut().for_each(|v| *v /= n);
    }
    n
}

fn mat_t_vec<T: Real>(w: &[T], rows: usize, cols: usize, u: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for r in 0..rows {
        let ur = u[r];
        for (o, &wv) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += wv * ur;
        }
    }
    out
}

fn mat_vec<T: Real>(w: &[T], rows: usize, cols: usize, v: &[T]) -> Vec<T> {
    (0..rows)
        .map(|r| w[r * cols..(r + 1) * cols].iter().zip(v).map(|(&a, &b)| a * b).sum())
        .collect()
}

/// Rows (output features) and columns of the matrix view of `w`.
pub fn matrix_dims<T: Real>(w: &Tensor<T>) -> Result<(usize, usize)> {
    let rows = *w
        .shape()
        .first()
        .ok_or_else(|| Error::Shape("spectral norm of a 0-d tensor".into()))?;
    Ok((rows, w.numel() / rows.max(1)))
}

/// Runs `iterations` power steps updating `u` (skipped when `iterations == 0`),
/// then returns `(v, σ)` with `v = Wᵀu/‖Wᵀu‖` and `σ = ‖Wᵀu‖ = uᵀWv`.
/// A zero matrix leaves `u` untouched and yields `σ = 0`.
pub fn power_iteration<T: Real>(
    w: &[T],
    rows: usize,
    cols: usize,
    u: &mut [T],
    iterations: usize,
) -> (Vec<T>, T) {
    for _ in 0..iterations {
        let mut v = mat_t_vec(w, rows, cols, u);
        if normalize(&mut v) == T::zero() {
            return (v, T::zero());
        }
        let mut next = mat_vec(w, rows, cols, &v);
        if normalize(&mut next) == T::zero() {
            return (v, T::zero());
        }
        u.copy_from_slice(&next);
    }
    let mut v = mat_t_vec(w, rows, cols, u);
    let sigma = normalize(&mut v);
    (v, sigma)
}

/// Power-iterates until the σ estimate stops moving (relative change within a
/// few ulps) or `max_iterations` is reached; returns the iterations used.
pub fn converge_power_iteration<T: Real>(w: &[T], rows: usize, cols: usize, u: &mut [T], max_iterations: usize) -> usize {
    let tol = T::epsilon() * T::lit(8.0);
    let (_, mut sigma) = power_iteration(w, rows, cols, u, 0);
    for i in 1..=max_iterations {
        let (_, next) = power_iteration(w, rows, cols, u, 1);
        if (next - sigma).abs() <= tol * next {
            return i;
        }
        sigma = next;
    }
    max_iterations
}

/// `W / σ̂(W)` using (and updating) the persistent estimate in `state`.
pub fn spectral_normalize<T: Real>(weight: &Tensor<T>, state: &mut SpectralState<T>) -> Result<Tensor<T>> {
    let (rows, cols) = matrix_dims(weight)?;
    if state.u.len() != rows {
        return Err(Error::Shape(format!(
            "spectral state has {} rows, weight {:?} has {rows}",
            state.u.len(),
            weight.shape()
        )));
    }
    let (_, sigma) = power_iteration(weight.data(), rows, cols, &mut state.u, state.iterations);
    if sigma == T::zero() {
        return Ok(Tensor::zeros(weight.shape()));
    }
    Ok(weight.map(|x| x / sigma))
}
