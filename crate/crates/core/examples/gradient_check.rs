//! Compares reverse-mode gradients of a conv layer against central differences.

use lowres_landmarks::autodiff::Graph;
use lowres_landmarks::gradcheck::{finite_diff_gradient, relative_error};
use lowres_landmarks::Tensor;

fn objective(x: &Tensor<f64>, k: &Tensor<f64>) -> lowres_landmarks::Result<(f64, Tensor<f64>)> {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let kv = g.constant(k.clone());
    let y = g.conv2d(xv, kv, None, 1, 1)?;
    let y = g.tanh(y);
    let sq = g.square(y);
    let loss = g.mean(sq);
    g.backward(loss)?;
    let grad = g.grad(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
    Ok((g.value(loss).data()[0], grad))
}

fn main() -> lowres_landmarks::Result<()> {
    let x = Tensor::from_fn(&[1, 2, 5, 5], |i| ((i * 37) % 11) as f64 / 5.0 - 1.0);
    let k = Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 13) % 7) as f64 / 7.0 - 0.4);
    let (loss, analytic) = objective(&x, &k)?;
    let numeric = finite_diff_gradient(|x| objective(x, &k).map(|(l, _)| l), &x, 1e-6)?;
    println!("loss {loss:.6}");
    println!("relative gradient error {:.2e}", relative_error(&analytic, &numeric));
    Ok(())
}
