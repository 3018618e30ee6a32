//! Forward and backward kernels for the fixed operator set.
//!
//! Every op is a pure function. Backward functions take the forward inputs
//! (or whatever the forward returned) plus the upstream gradient and return
//! gradients for each differentiable argument.

use rayon::prelude::*;

use super::scalar::{gemm, MatRef};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Spatial geometry of a 2D sliding-window op.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Window {
    pub fn output_dims(&self, op: &'static str, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::contract(op, "stride must be positive"));
        }
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < self.kh || pw < self.kw {
            return Err(Error::contract(
                op,
                format!(
                    "kernel {}x{} does not fit padded input {}x{}",
                    self.kh, self.kw, ph, pw
                ),
            ));
        }
        Ok(((ph - self.kh) / self.stride + 1, (pw - self.kw) / self.stride + 1))
    }
}

fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    win: Window,
    oh: usize,
    ow: usize,
    col: &mut [T],
) {
    let Window {
        kh,
        kw,
        stride,
        padding,
    } = win;
    let plane = oh * ow;
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        drow.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            srow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    win: Window,
    oh: usize,
    ow: usize,
    dx: &mut [T],
) {
    let Window {
        kh,
        kw,
        stride,
        padding,
    } = win;
    let plane = oh * ow;
    for ci in 0..c {
        let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            drow[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn is_pointwise(win: Window) -> bool {
    win.kh == 1 && win.kw == 1 && win.stride == 1 && win.padding == 0
}

fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<([usize; 4], [usize; 4], Window, usize, usize)> {
    let xd = input.dims4("conv2d")?;
    let wd = weight.dims4("conv2d")?;
    if xd[1] != wd[1] {
        return Err(Error::shape("conv2d", input.shape(), weight.shape()));
    }
    if bias.shape() != [wd[0]] {
        return Err(Error::shape("conv2d", weight.shape(), bias.shape()));
    }
    let win = Window {
        kh: wd[2],
        kw: wd[3],
        stride,
        padding,
    };
    let (oh, ow) = win.output_dims("conv2d", xd[2], xd[3])?;
    Ok((xd, wd, win, oh, ow))
}

/// 2D cross-correlation: `[N,C,H,W] x [F,C,kh,kw] -> [N,F,H',W']`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let ([n, c, h, w], [f, _, kh, kw], win, oh, ow) =
        conv_geometry(input, weight, bias, stride, padding)?;
    let ckk = c * kh * kw;
    let plane = oh * ow;
    let mut out = Tensor::zeros(&[n, f, oh, ow]);
    let wmat = MatRef::new(weight.data(), f, ckk);
    out.data_mut()
        .par_chunks_mut(f * plane)
        .enumerate()
        .for_each(|(i, o)| {
            let x = input.item(i);
            for (fi, chunk) in o.chunks_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bias.data()[fi]);
            }
            if is_pointwise(win) {
                gemm(wmat, MatRef::new(x, c, plane), o, true);
            } else {
                let mut col = vec![T::zero(); ckk * plane];
                im2col(x, c, h, w, win, oh, ow, &mut col);
                gemm(wmat, MatRef::new(&col, ckk, plane), o, true);
            }
        });
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to `(input, weight, bias)`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let ([n, c, h, w], [f, _, kh, kw], win, oh, ow) =
        conv_geometry(input, weight, bias, stride, padding)?;
    if grad_out.shape() != [n, f, oh, ow] {
        return Err(Error::shape(
            "conv2d_backward",
            &[n, f, oh, ow],
            grad_out.shape(),
        ));
    }
    let ckk = c * kh * kw;
    let plane = oh * ow;
    let wmat = MatRef::new(weight.data(), f, ckk);

    let cols: Vec<Vec<T>> = if is_pointwise(win) {
        Vec::new()
    } else {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut col = vec![T::zero(); ckk * plane];
                im2col(input.item(i), c, h, w, win, oh, ow, &mut col);
                col
            })
            .collect()
    };

    let mut d_input = Tensor::zeros(input.shape());
    d_input
        .data_mut()
        .par_chunks_mut(c * h * w)
        .enumerate()
        .for_each(|(i, dx)| {
            let g = MatRef::new(grad_out.item(i), f, plane);
            if is_pointwise(win) {
                gemm(wmat.t(), g, dx, false);
            } else {
                let mut dcol = vec![T::zero(); ckk * plane];
                gemm(wmat.t(), g, &mut dcol, false);
                col2im(&dcol, c, h, w, win, oh, ow, dx);
            }
        });

    // Fixed sample order keeps the weight reduction run-to-run identical.
    let mut d_weight = Tensor::zeros(weight.shape());
    let mut d_bias = Tensor::zeros(bias.shape());
    for i in 0..n {
        let g = grad_out.item(i);
        let col: &[T] = if is_pointwise(win) {
            input.item(i)
        } else {
            &cols[i]
        };
        gemm(
            MatRef::new(g, f, plane),
            MatRef::new(col, ckk, plane).t(),
            d_weight.data_mut(),
            true,
        );
        for (fi, chunk) in g.chunks(plane).enumerate() {
            d_bias.data_mut()[fi] += chunk.iter().copied().sum::<T>();
        }
    }
    Ok((d_input, d_weight, d_bias))
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    Tensor::from_fn(input.shape(), |i| input.data()[i].max(T::zero()))
}

/// Upstream gradient masked to positions where the forward input was positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    Tensor::from_fn(input.shape(), |i| {
        if input.data()[i] > T::zero() {
            grad_out.data()[i]
        } else {
            T::zero()
        }
    })
}

/// Output of [`max_pool2d`]; `argmax` holds flat input offsets per output value.
#[derive(Clone, Debug)]
pub struct Pooled<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

pub fn max_pool2d<T: Scalar>(input: &Tensor<T>, k: usize, stride: usize) -> Result<Pooled<T>> {
    let [n, c, h, w] = input.dims4("max_pool2d")?;
    let win = Window {
        kh: k,
        kw: k,
        stride,
        padding: 0,
    };
    let (oh, ow) = win.output_dims("max_pool2d", h, w)?;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let x = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..k {
                    for kx in 0..k {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        // strict comparison: the first maximum in row-major order wins
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok(Pooled {
        output: Tensor::new(&[n, c, oh, ow], out)?,
        argmax,
    })
}

pub fn max_pool2d_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let mut d = Tensor::zeros(input_shape);
    for (&src, &g) in argmax.iter().zip(grad_out.data()) {
        d.data_mut()[src] += g;
    }
    d
}

fn check_affine<T: Scalar>(
    input: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
) -> Result<[usize; 4]> {
    let d = input.dims4("frozen_affine")?;
    if scale.shape() != [d[1]] || shift.shape() != [d[1]] {
        return Err(Error::shape("frozen_affine", input.shape(), scale.shape()));
    }
    Ok(d)
}

/// Per-channel `scale * x + shift` with constant (non-trainable) coefficients.
pub fn frozen_affine<T: Scalar>(
    input: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [_, c, h, w] = check_affine(input, scale, shift)?;
    let hw = h * w;
    Ok(Tensor::from_fn(input.shape(), |i| {
        let ch = (i / hw) % c;
        scale.data()[ch] * input.data()[i] + shift.data()[ch]
    }))
}

/// Gradient with respect to the input only; scale and shift are frozen.
pub fn frozen_affine_backward<T: Scalar>(
    scale: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [_, c, h, w] = grad_out.dims4("frozen_affine_backward")?;
    if scale.shape() != [c] {
        return Err(Error::shape(
            "frozen_affine_backward",
            grad_out.shape(),
            scale.shape(),
        ));
    }
    let hw = h * w;
    Ok(Tensor::from_fn(grad_out.shape(), |i| {
        scale.data()[(i / hw) % c] * grad_out.data()[i]
    }))
}

fn check_linear<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    let [n, d] = input.dims2("linear")?;
    let [o, dw] = weight.dims2("linear")?;
    if d != dw {
        return Err(Error::shape("linear", input.shape(), weight.shape()));
    }
    if bias.shape() != [o] {
        return Err(Error::shape("linear", weight.shape(), bias.shape()));
    }
    Ok((n, d, o))
}

/// `input [N,D] * weight[O,D]^T + bias[O]`.
pub fn linear<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, d, o) = check_linear(input, weight, bias)?;
    let mut out = Tensor::from_fn(&[n, o], |i| bias.data()[i % o]);
    gemm(
        MatRef::new(input.data(), n, d),
        MatRef::new(weight.data(), o, d).t(),
        out.data_mut(),
        true,
    );
    Ok(out)
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, d, o) = check_linear(input, weight, bias)?;
    if grad_out.shape() != [n, o] {
        return Err(Error::shape("linear_backward", &[n, o], grad_out.shape()));
    }
    let g = MatRef::new(grad_out.data(), n, o);
    let mut d_in = Tensor::zeros(&[n, d]);
    gemm(g, MatRef::new(weight.data(), o, d), d_in.data_mut(), false);
    let mut d_w = Tensor::zeros(&[o, d]);
    gemm(g.t(), MatRef::new(input.data(), n, d), d_w.data_mut(), false);
    let mut d_b = Tensor::zeros(&[o]);
    for row in grad_out.data().chunks(o) {
        for (acc, &v) in d_b.data_mut().iter_mut().zip(row) {
            *acc += v;
        }
    }
    Ok((d_in, d_w, d_b))
}
