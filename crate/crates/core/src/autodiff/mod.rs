//! Reverse-mode differentiation over a tape of tensor operations.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so walking the tape backwards visits every node after all
//! of its consumers. Parameters enter the tape as leaves tagged with the id of
//! the store they came from; see [`crate::nn::ParamStore::collect_grads`].

pub mod kernels;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Param {
        store: u64,
        index: usize,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine {
        input: Var,
        scale: T,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Square(Var),
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    AvgPool2(Var),
    Upsample2(Var),
    Concat {
        inputs: Vec<Var>,
    },
    BatchNorm {
        input: Var,
        scale: Var,
        shift: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    SpectralNorm {
        weight: Var,
        u: Vec<T>,
        v: Vec<T>,
        sigma: T,
    },
    Mean(Var),
    Sum(Var),
    SumSpatial(Var),
    Reshape(Var),
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of a single forward pass.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf that is not tied to a parameter store.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: u64, index: usize, value: Tensor<T>) -> Var {
        self.push(value, Op::Param { store, index }, true)
    }

    /// Copies `v` into a constant leaf; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    /// Parameter leaves of `store` that received a gradient.
    pub fn param_grads(&self, store: u64) -> impl Iterator<Item = (usize, &Tensor<T>)> {
        self.nodes.iter().filter_map(move |n| match n.op {
            Op::Param { store: s, index } if s == store => n.grad.as_ref().map(|g| (index, g)),
            _ => None,
        })
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let value = kernels::conv2d_forward(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let rg = self.rg(input) || self.rg(kernel) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    /// `y = x·Wᵀ + b` for `x: N×in`, `W: out×in`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let (n, fin) = match x.shape() {
            [n, f] => (*n, *f),
            s => return Err(Error::Shape(format!("linear: expected N×in input, got {s:?}"))),
        };
        let (fout, win) = match w.shape() {
            [o, i] => (*o, *i),
            s => return Err(Error::Shape(format!("linear: expected out×in weight, got {s:?}"))),
        };
        if win != fin {
            return Err(Error::Shape(format!(
                "linear: input {:?} incompatible with weight {:?}",
                x.shape(),
                w.shape()
            )));
        }
        let mut y = Tensor::zeros(&[n, fout]);
        T::gemm(n, fin, fout, x.data(), false, w.data(), true, y.data_mut(), false);
        if let Some(b) = bias {
            let b = self.value(b);
            if b.numel() != fout {
                return Err(Error::Shape(format!("linear: bias {:?} vs {fout} outputs", b.shape())));
            }
            for row in y.data_mut().chunks_mut(fout) {
                for (v, &bv) in row.iter_mut().zip(b.data()) {
                    *v += bv;
                }
            }
        }
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(y, Op::Linear { input, weight, bias }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    /// `y = scale·x + shift` elementwise.
    pub fn affine(&mut self, input: Var, scale: T, shift: T) -> Var {
        let v = self.value(input).map(|x| scale * x + shift);
        let rg = self.rg(input);
        self.push(v, Op::Affine { input, scale }, rg)
    }

    pub fn scale(&mut self, input: Var, scale: T) -> Var {
        self.affine(input, scale, T::zero())
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let v = self.value(input).map(|x| x.max(T::zero()));
        let rg = self.rg(input);
        self.push(v, Op::Relu(input), rg)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let v = self.value(input).map(|x| T::one() / (T::one() + (-x).exp()));
        let rg = self.rg(input);
        self.push(v, Op::Sigmoid(input), rg)
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        let v = self.value(input).map(|x| x.tanh());
        let rg = self.rg(input);
        self.push(v, Op::Tanh(input), rg)
    }

    pub fn square(&mut self, input: Var) -> Var {
        let v = self.value(input).map(|x| x * x);
        let rg = self.rg(input);
        self.push(v, Op::Square(input), rg)
    }

    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let (v, argmax) = kernels::max_pool2(self.value(input))?;
        let rg = self.rg(input);
        Ok(self.push(v, Op::MaxPool2 { input, argmax }, rg))
    }

    pub fn avg_pool2(&mut self, input: Var) -> Result<Var> {
        let v = kernels::avg_pool2(self.value(input))?;
        let rg = self.rg(input);
        Ok(self.push(v, Op::AvgPool2(input), rg))
    }

    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let v = kernels::upsample2(self.value(input))?;
        let rg = self.rg(input);
        Ok(self.push(v, Op::Upsample2(input), rg))
    }

    /// Concatenation along the channel axis of `N×C×H×W` tensors.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let (n, _, h, w) = self.value(first).dims4()?;
        let mut total = 0;
        for &v in inputs {
            let (n2, c2, h2, w2) = self.value(v).dims4()?;
            if (n2, h2, w2) != (n, h, w) {
                return Err(Error::Shape(format!(
                    "concat: {:?} incompatible with {:?}",
                    self.value(first).shape(),
                    self.value(v).shape()
                )));
            }
            total += c2;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * total * hw);
        for item in 0..n {
            for &v in inputs {
                let t = self.value(v);
                let c = t.shape()[1];
                data.extend_from_slice(&t.data()[item * c * hw..(item + 1) * c * hw]);
            }
        }
        let value = Tensor::from_vec(&[n, total, h, w], data)?;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            rg,
        ))
    }

    /// Batch normalisation with batch statistics. Returns the output and the
    /// biased per-channel (mean, variance) used, so callers can update running
    /// estimates.
    pub fn batch_norm_train(
        &mut self,
        input: Var,
        scale: Var,
        shift: Var,
        eps: T,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let x = self.value(input);
        let (n, c, _, _) = x.dims4()?;
        if n < 2 {
            return Err(Error::Input(
                "batch_norm: training mode needs a batch of at least 2 items".into(),
            ));
        }
        self.check_channel_param(scale, c)?;
        self.check_channel_param(shift, c)?;
        let (mean, var) = kernels::channel_stats(x)?;
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (y, xhat) = kernels::channel_affine(
            x,
            &mean,
            &inv_std,
            self.value(scale).data(),
            self.value(shift).data(),
        )?;
        let rg = self.rg(input) || self.rg(scale) || self.rg(shift);
        let out = self.push(
            y,
            Op::BatchNorm {
                input,
                scale,
                shift,
                xhat,
                inv_std,
                batch_stats: true,
            },
            rg,
        );
        Ok((out, mean, var))
    }

    /// Batch normalisation with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        scale: Var,
        shift: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        let (_, c, _, _) = self.value(input).dims4()?;
        self.check_channel_param(scale, c)?;
        self.check_channel_param(shift, c)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::Shape(format!(
                "batch_norm: running statistics have {} entries for {c} channels",
                mean.len()
            )));
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (y, xhat) = kernels::channel_affine(
            self.value(input),
            mean,
            &inv_std,
            self.value(scale).data(),
            self.value(shift).data(),
        )?;
        let rg = self.rg(input) || self.rg(scale) || self.rg(shift);
        Ok(self.push(
            y,
            Op::BatchNorm {
                input,
                scale,
                shift,
                xhat,
                inv_std,
                batch_stats: false,
            },
            rg,
        ))
    }

    fn check_channel_param(&self, p: Var, c: usize) -> Result<()> {
        if self.value(p).numel() != c {
            return Err(Error::Shape(format!(
                "batch_norm: parameter {:?} does not match {c} channels",
                self.value(p).shape()
            )));
        }
        Ok(())
    }

    /// `W / σ` where `σ = uᵀ W v` comes from a power iteration run by the caller
    /// (`u`, `v` are held constant for differentiation). A zero `σ` yields zeros.
    pub fn spectral_norm(&mut self, weight: Var, u: Vec<T>, v: Vec<T>, sigma: T) -> Var {
        let value = if sigma > T::zero() {
            self.value(weight).map(|x| x / sigma)
        } else {
            Tensor::zeros(self.value(weight).shape())
        };
        let rg = self.rg(weight);
        self.push(value, Op::SpectralNorm { weight, u, v, sigma }, rg)
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let v = Tensor::scalar(self.value(input).mean());
        let rg = self.rg(input);
        self.push(v, Op::Mean(input), rg)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let v = Tensor::scalar(self.value(input).sum());
        let rg = self.rg(input);
        self.push(v, Op::Sum(input), rg)
    }

    pub fn sum_spatial(&mut self, input: Var) -> Result<Var> {
        let v = kernels::sum_spatial(self.value(input))?;
        let rg = self.rg(input);
        Ok(self.push(v, Op::SumSpatial(input), rg))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(input).clone().reshape(shape)?;
        let rg = self.rg(input);
        Ok(self.push(v, Op::Reshape(input), rg))
    }

    /// Runs reverse-mode accumulation from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.value(loss).is_finite() {
            return Err(Error::NonFinite("loss passed to backward".into()));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let seed = Tensor::full(self.value(loss).shape(), T::one());
        self.nodes[loss.0].grad = Some(seed);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.input_grads(i, &grad)?;
            self.nodes[i].grad = Some(grad);
            for (v, g) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match self.nodes[v.0].grad.as_mut() {
                    Some(acc) => acc.add_assign(&g)?,
                    None => self.nodes[v.0].grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, i: usize, dy: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf | Op::Param { .. } => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let g = kernels::conv2d_backward(
                    self.value(*input),
                    self.value(*kernel),
                    dy,
                    *stride,
                    *padding,
                    self.rg(*input),
                )?;
                if let Some(dx) = g.input {
                    out.push((*input, dx));
                }
                out.push((*kernel, g.kernel));
                if let Some(b) = bias {
                    let shape = self.value(*b).shape().to_vec();
                    out.push((*b, g.bias.reshape(&shape)?));
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (n, fin) = (x.shape()[0], x.shape()[1]);
                let fout = w.shape()[0];
                if self.rg(*input) {
                    let mut dx = Tensor::zeros(x.shape());
                    T::gemm(n, fout, fin, dy.data(), false, w.data(), false, dx.data_mut(), false);
                    out.push((*input, dx));
                }
                let mut dw = Tensor::zeros(w.shape());
                T::gemm(fout, n, fin, dy.data(), true, x.data(), false, dw.data_mut(), false);
                out.push((*weight, dw));
                if let Some(b) = bias {
                    let mut db = Tensor::zeros(self.value(*b).shape());
                    for row in dy.data().chunks(fout) {
                        for (d, &g) in db.data_mut().iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    out.push((*b, db));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, dy.clone()));
                out.push((*b, dy.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, dy.clone()));
                out.push((*b, dy.map(|g| -g)));
            }
            Op::Mul(a, b) => {
                out.push((*a, dy.zip_map(self.value(*b), |g, y| g * y)?));
                out.push((*b, dy.zip_map(self.value(*a), |g, x| g * x)?));
            }
            Op::Affine { input, scale } => {
                let s = *scale;
                out.push((*input, dy.map(|g| g * s)));
            }
            Op::Relu(input) => {
                out.push((
                    *input,
                    dy.zip_map(&node.value, |g, y| if y > T::zero() { g } else { T::zero() })?,
                ));
            }
            Op::Sigmoid(input) => {
                out.push((*input, dy.zip_map(&node.value, |g, y| g * y * (T::one() - y))?));
            }
            Op::Tanh(input) => {
                out.push((*input, dy.zip_map(&node.value, |g, y| g * (T::one() - y * y))?));
            }
            Op::Square(input) => {
                let two = T::lit(2.0);
                out.push((*input, dy.zip_map(self.value(*input), |g, x| two * g * x)?));
            }
            Op::MaxPool2 { input, argmax } => {
                out.push((
                    *input,
                    kernels::max_pool2_backward(self.value(*input).shape(), argmax, dy),
                ));
            }
            Op::AvgPool2(input) => {
                out.push((*input, kernels::avg_pool2_backward(self.value(*input).shape(), dy)));
            }
            Op::Upsample2(input) => {
                out.push((*input, kernels::upsample2_backward(self.value(*input).shape(), dy)));
            }
            Op::Concat { inputs } => {
                let (n, total, h, w) = node.value.dims4()?;
                let hw = h * w;
                let mut offset = 0;
                for &v in inputs {
                    let c = self.value(v).shape()[1];
                    if self.rg(v) {
                        let mut data = Vec::with_capacity(n * c * hw);
                        for item in 0..n {
                            let start = (item * total + offset) * hw;
                            data.extend_from_slice(&dy.data()[start..start + c * hw]);
                        }
                        out.push((v, Tensor::from_vec(&[n, c, h, w], data)?));
                    }
                    offset += c;
                }
            }
            Op::BatchNorm {
                input,
                scale,
                shift,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (n, c, h, w) = dy.dims4()?;
                let hw = h * w;
                let m = T::from_usize(n * hw).unwrap();
                let gamma = self.value(*scale).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for item in 0..n {
                    for ch in 0..c {
                        let r = (item * c + ch) * hw..(item * c + ch + 1) * hw;
                        for j in r {
                            dbeta[ch] += dy.data()[j];
                            dgamma[ch] += dy.data()[j] * xhat.data()[j];
                        }
                    }
                }
                if self.rg(*input) {
                    let mut dx = Tensor::zeros(dy.shape());
                    for item in 0..n {
                        for ch in 0..c {
                            let k = gamma[ch] * inv_std[ch];
                            let r = (item * c + ch) * hw..(item * c + ch + 1) * hw;
                            for j in r {
                                dx.data_mut()[j] = if *batch_stats {
                                    k / m * (m * dy.data()[j] - dbeta[ch] - xhat.data()[j] * dgamma[ch])
                                } else {
                                    k * dy.data()[j]
                                };
                            }
                        }
                    }
                    out.push((*input, dx));
                }
                let sshape = self.value(*scale).shape().to_vec();
                out.push((*scale, Tensor::from_vec(&sshape, dgamma)?));
                let bshape = self.value(*shift).shape().to_vec();
                out.push((*shift, Tensor::from_vec(&bshape, dbeta)?));
            }
            Op::SpectralNorm { weight, u, v, sigma } => {
                if *sigma > T::zero() {
                    // d(W/σ)/dW with σ = uᵀWv: (G − ⟨G, W/σ⟩ u vᵀ) / σ
                    let inner: T = dy
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(&g, &wn)| g * wn)
                        .sum();
                    let cols = v.len();
                    let s = *sigma;
                    let dw = Tensor::from_fn(dy.shape(), |idx| {
                        let (r, c) = (idx / cols, idx % cols);
                        (dy.data()[idx] - inner * u[r] * v[c]) / s
                    });
                    out.push((*weight, dw));
                } else {
                    out.push((*weight, Tensor::zeros(dy.shape())));
                }
            }
            Op::Mean(input) => {
                let x = self.value(*input);
                let g = dy.data()[0] / T::from_usize(x.numel()).unwrap();
                out.push((*input, Tensor::full(x.shape(), g)));
            }
            Op::Sum(input) => {
                out.push((*input, Tensor::full(self.value(*input).shape(), dy.data()[0])));
            }
            Op::SumSpatial(input) => {
                let shape = self.value(*input).shape();
                let hw = shape[2] * shape[3];
                let g = dy.data();
                out.push((*input, Tensor::from_fn(shape, |idx| g[idx / hw])));
            }
            Op::Reshape(input) => {
                let shape = self.value(*input).shape().to_vec();
                out.push((*input, dy.clone().reshape(&shape)?));
            }
        }
        Ok(out)
    }
}
