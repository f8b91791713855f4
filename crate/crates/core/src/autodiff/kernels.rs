//! Forward and backward kernels on plain tensors. The graph in `super` records
//! which of these to call; data-side code (subsampling, pooling of images) uses
//! them directly.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub fn conv_out_size(size: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    (size + 2 * padding).checked_sub(k).map(|d| d / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn conv_geom<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, ConvGeom)> {
    let (n, c, h, w) = input.dims4()?;
    let (o, kc, kh, kw) = kernel.dims4()?;
    if kc != c {
        return Err(Error::Shape(format!(
            "conv2d: input {:?} has {} channels but kernel {:?} expects {}",
            input.shape(),
            c,
            kernel.shape(),
            kc
        )));
    }
    if stride == 0 {
        return Err(Error::Config("conv2d: stride must be at least 1".into()));
    }
    let (oh, ow) = match (
        conv_out_size(h, kh, stride, padding),
        conv_out_size(w, kw, stride, padding),
    ) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::Shape(format!(
                "conv2d: kernel {:?} larger than padded input {:?}",
                kernel.shape(),
                input.shape()
            )))
        }
    };
    Ok((
        n,
        o,
        ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            oh,
            ow,
            stride,
            pad: padding,
        },
    ))
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let hw_out = g.oh * g.ow;
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let hw_out = g.oh * g.ow;
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dx[base + ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (n, o, g) = conv_geom(input, kernel, stride, padding)?;
    if let Some(b) = bias {
        if b.numel() != o {
            return Err(Error::Shape(format!(
                "conv2d: bias {:?} does not match {} output channels",
                b.shape(),
                o
            )));
        }
    }
    let ckk = g.c * g.kh * g.kw;
    let hw_in = g.c * g.h * g.w;
    let hw_out = g.oh * g.ow;
    let mut out = Tensor::zeros(&[n, o, g.oh, g.ow]);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); ckk * hw_out]
    };
    let x = input.data();
    let k = kernel.data();
    let y = out.data_mut();
    for item in 0..n {
        let xi = &x[item * hw_in..(item + 1) * hw_in];
        let yi = &mut y[item * o * hw_out..(item + 1) * o * hw_out];
        if g.is_pointwise() {
            T::gemm(o, ckk, hw_out, k, false, xi, false, yi, false);
        } else {
            im2col(xi, &g, &mut cols);
            T::gemm(o, ckk, hw_out, k, false, &cols, false, yi, false);
        }
        if let Some(b) = bias {
            for (oc, &bv) in b.data().iter().enumerate() {
                yi[oc * hw_out..(oc + 1) * hw_out]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let (n, o, g) = conv_geom(input, kernel, stride, padding)?;
    let ckk = g.c * g.kh * g.kw;
    let hw_in = g.c * g.h * g.w;
    let hw_out = g.oh * g.ow;
    let mut dk = Tensor::zeros(kernel.shape());
    let mut db = Tensor::zeros(&[o]);
    let mut dx = if need_input {
        Some(Tensor::zeros(input.shape()))
    } else {
        None
    };
    let pointwise = g.is_pointwise();
    let mut cols = vec![T::zero(); if pointwise { 0 } else { ckk * hw_out }];
    let mut dcols = vec![T::zero(); if need_input && !pointwise { ckk * hw_out } else { 0 }];
    let x = input.data();
    let k = kernel.data();
    let dy = grad_out.data();
    for item in 0..n {
        let xi = &x[item * hw_in..(item + 1) * hw_in];
        let dyi = &dy[item * o * hw_out..(item + 1) * o * hw_out];
        for (oc, b) in db.data_mut().iter_mut().enumerate() {
            *b += dyi[oc * hw_out..(oc + 1) * hw_out].iter().copied().sum::<T>();
        }
        if pointwise {
            T::gemm(o, hw_out, ckk, dyi, false, xi, true, dk.data_mut(), true);
        } else {
            im2col(xi, &g, &mut cols);
            T::gemm(o, hw_out, ckk, dyi, false, &cols, true, dk.data_mut(), true);
        }
        if let Some(dx) = dx.as_mut() {
            let dxi = &mut dx.data_mut()[item * hw_in..(item + 1) * hw_in];
            if pointwise {
                T::gemm(ckk, o, hw_out, k, true, dyi, false, dxi, false);
            } else {
                T::gemm(ckk, o, hw_out, k, true, dyi, false, &mut dcols, false);
                col2im(&dcols, &g, dxi);
            }
        }
    }
    Ok(ConvGrads {
        input: dx,
        kernel: dk,
        bias: db,
    })
}

fn expect_even<T: Real>(x: &Tensor<T>, op: &str) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::Shape(format!(
            "{op}: spatial size {h}x{w} must be even and non-zero"
        )));
    }
    Ok((n, c, h, w))
}

pub fn avg_pool2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = expect_even(x, "avg_pool2")?;
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let src = x.data();
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    for (plane, dst) in out.data_mut().chunks_mut(oh * ow).enumerate() {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let i = 2 * oy * w + 2 * ox;
                dst[oy * ow + ox] = (s[i] + s[i + 1] + s[i + w] + s[i + w + 1]) * quarter;
            }
        }
    }
    Ok(out)
}

pub fn avg_pool2_backward<T: Real>(input_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let mut dx = Tensor::zeros(input_shape);
    let g = dy.data();
    for (plane, d) in dx.data_mut().chunks_mut(h * w).enumerate() {
        for y in 0..h {
            for xx in 0..w {
                d[y * w + xx] = g[plane * oh * ow + (y / 2) * ow + xx / 2] * quarter;
            }
        }
    }
    dx
}

/// 2×2 max pooling; returns the flat input index each output was taken from.
/// Ties resolve to the first element in row-major order.
pub fn max_pool2<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = expect_even(x, "max_pool2")?;
    let (oh, ow) = (h / 2, w / 2);
    let src = x.data();
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut arg = vec![0usize; n * c * oh * ow];
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i0 = base + 2 * oy * w + 2 * ox;
                let mut best = i0;
                for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                let o = plane * oh * ow + oy * ow + ox;
                out.data_mut()[o] = src[best];
                arg[o] = best;
            }
        }
    }
    Ok((out, arg))
}

pub fn max_pool2_backward<T: Real>(input_shape: &[usize], argmax: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&src, &g) in argmax.iter().zip(dy.data()) {
        d[src] += g;
    }
    dx
}

/// Nearest-neighbour ×2 upsampling.
pub fn upsample2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let src = x.data();
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    for (plane, dst) in out.data_mut().chunks_mut(oh * ow).enumerate() {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                dst[y * ow + xx] = s[(y / 2) * w + xx / 2];
            }
        }
    }
    Ok(out)
}

pub fn upsample2_backward<T: Real>(input_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let ow = 2 * w;
    let mut dx = Tensor::zeros(input_shape);
    let g = dy.data();
    for (plane, d) in dx.data_mut().chunks_mut(h * w).enumerate() {
        let gp = &g[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for y in 0..h {
            for xx in 0..w {
                let i = 2 * y * ow + 2 * xx;
                d[y * w + xx] = gp[i] + gp[i + 1] + gp[i + ow] + gp[i + ow + 1];
            }
        }
    }
    dx
}

/// Per-channel batch statistics over `N×H×W`: (mean, biased variance).
pub fn channel_stats<T: Real>(x: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let count = T::from_usize(n * hw).unwrap();
    let d = x.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for item in 0..n {
            s += d[(item * c + ch) * hw..(item * c + ch + 1) * hw].iter().copied().sum::<T>();
        }
        let m = s / count;
        let mut v = T::zero();
        for item in 0..n {
            for &val in &d[(item * c + ch) * hw..(item * c + ch + 1) * hw] {
                v += (val - m) * (val - m);
            }
        }
        mean[ch] = m;
        var[ch] = v / count;
    }
    Ok((mean, var))
}

/// `y = scale·(x − mean)·inv_std + shift` per channel; also returns x̂.
pub fn channel_affine<T: Real>(
    x: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    scale: &[T],
    shift: &[T],
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    let d = x.data();
    for item in 0..n {
        for ch in 0..c {
            let r = (item * c + ch) * hw..(item * c + ch + 1) * hw;
            for i in r {
                let xh = (d[i] - mean[ch]) * inv_std[ch];
                xhat.data_mut()[i] = xh;
                y.data_mut()[i] = scale[ch] * xh + shift[ch];
            }
        }
    }
    Ok((y, xhat))
}

/// Sums `N×C×H×W` over the spatial axes into `N×C`.
pub fn sum_spatial<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    Tensor::from_vec(
        &[n, c],
        x.data().chunks(hw).map(|p| p.iter().copied().sum()).collect(),
    )
}
