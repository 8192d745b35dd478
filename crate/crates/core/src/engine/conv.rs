//! Convolution and transpose-convolution kernels.
//!
//! Weights are laid out (C_out, C_in, kH, kW). Every output element is
//! reduced over (C_in, kH, kW) in that fixed order, and every input-gradient
//! element over (C_out, kH, kW), independent of how planes are distributed
//! across threads.

use crate::error::{Error, Result};
use crate::exec;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// Stride 1 with padding that preserves spatial size for odd kernels.
    pub fn same(kernel: usize) -> Self {
        ConvGeometry {
            stride: 1,
            padding: (kernel.saturating_sub(1)) / 2,
        }
    }

    fn output_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = (input + 2 * self.padding).checked_sub(kernel)?;
        if self.stride == 0 || span % self.stride != 0 {
            return None;
        }
        Some(span / self.stride + 1)
    }
}

/// Output positions `lo..hi` whose input coordinate `o * stride + k - pad`
/// lands inside `0..input`.
#[inline]
fn valid_range(out_len: usize, input: usize, k: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if input + pad > k {
        ((input + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

pub(crate) fn check_conv(x: Shape, w: Shape, bias: Option<Shape>, g: ConvGeometry) -> Result<Shape> {
    let [n, c_in, h, wd] = x.dims();
    let [c_out, w_in, kh, kw] = w.dims();
    if c_in != w_in {
        return Err(Error::config(format!(
            "conv2d: input has {c_in} channels but weights {w} expect {w_in}"
        )));
    }
    if let Some(b) = bias {
        if b.numel() != c_out {
            return Err(Error::config(format!(
                "conv2d: bias has {} elements but weights {w} produce {c_out} channels",
                b.numel()
            )));
        }
    }
    let oh = g.output_len(h, kh);
    let ow = g.output_len(wd, kw);
    match (oh, ow) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok(Shape::new(n, c_out, oh, ow)),
        _ => Err(Error::config(format!(
            "conv2d: input {h}x{wd} with kernel {kh}x{kw}, stride {}, padding {} does not give an integral output size",
            g.stride, g.padding
        ))),
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: ConvGeometry,
) -> Result<Tensor<T>> {
    let out_shape = check_conv(x.shape(), w.shape(), bias.map(|b| b.shape()), g)?;
    let [_, c_in, h, wd] = x.shape().dims();
    let [_, c_out, oh, ow] = out_shape.dims();
    let [_, _, kh, kw] = w.shape().dims();
    let (xs, ws) = (x.data(), w.data());
    let (s, p) = (g.stride, g.padding);

    let mut out = vec![T::zero(); out_shape.numel()];
    exec::for_each_chunk(&mut out, oh * ow, |idx, plane| {
        let (n, co) = (idx / c_out, idx % c_out);
        let b = bias.map_or(T::zero(), |b| b.data()[co]);
        plane.iter_mut().for_each(|v| *v = b);
        for ci in 0..c_in {
            let inp = &xs[(n * c_in + ci) * h * wd..][..h * wd];
            let wk = &ws[(co * c_in + ci) * kh * kw..][..kh * kw];
            for ky in 0..kh {
                let (ylo, yhi) = valid_range(oh, h, ky, p, s);
                for kx in 0..kw {
                    let wv = wk[ky * kw + kx];
                    let (xlo, xhi) = valid_range(ow, wd, kx, p, s);
                    if xlo >= xhi {
                        continue;
                    }
                    for oy in ylo..yhi {
                        let iy = oy * s + ky - p;
                        let orow = &mut plane[oy * ow + xlo..oy * ow + xhi];
                        let ix0 = xlo * s + kx - p;
                        if s == 1 {
                            let irow = &inp[iy * wd + ix0..iy * wd + ix0 + orow.len()];
                            for (o, &i) in orow.iter_mut().zip(irow) {
                                *o = *o + wv * i;
                            }
                        } else {
                            for (j, o) in orow.iter_mut().enumerate() {
                                *o = *o + wv * inp[iy * wd + ix0 + j * s];
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::from_vec(out_shape, out)
}

pub(crate) struct ConvGrads<T> {
    pub input: Vec<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub(crate) fn conv2d_backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, g: ConvGeometry, gout: &[T]) -> ConvGrads<T> {
    let [n_batch, c_in, h, wd] = x.shape().dims();
    let [c_out, _, kh, kw] = w.shape().dims();
    let oh = g.output_len(h, kh).unwrap_or(0);
    let ow = g.output_len(wd, kw).unwrap_or(0);
    let (xs, ws) = (x.data(), w.data());
    let (s, p) = (g.stride, g.padding);

    let mut dx = vec![T::zero(); x.numel()];
    exec::for_each_chunk(&mut dx, h * wd, |idx, plane| {
        let (n, ci) = (idx / c_in, idx % c_in);
        for co in 0..c_out {
            let go = &gout[(n * c_out + co) * oh * ow..][..oh * ow];
            let wk = &ws[(co * c_in + ci) * kh * kw..][..kh * kw];
            for ky in 0..kh {
                let (ylo, yhi) = valid_range(oh, h, ky, p, s);
                for kx in 0..kw {
                    let wv = wk[ky * kw + kx];
                    let (xlo, xhi) = valid_range(ow, wd, kx, p, s);
                    if xlo >= xhi {
                        continue;
                    }
                    for oy in ylo..yhi {
                        let iy = oy * s + ky - p;
                        let ix0 = xlo * s + kx - p;
                        let grow = &go[oy * ow + xlo..oy * ow + xhi];
                        if s == 1 {
                            let irow = &mut plane[iy * wd + ix0..iy * wd + ix0 + grow.len()];
                            for (i, &gv) in irow.iter_mut().zip(grow) {
                                *i = *i + wv * gv;
                            }
                        } else {
                            for (j, &gv) in grow.iter().enumerate() {
                                let i = &mut plane[iy * wd + ix0 + j * s];
                                *i = *i + wv * gv;
                            }
                        }
                    }
                }
            }
        }
    });

    let mut dw = vec![T::zero(); w.numel()];
    exec::for_each_chunk(&mut dw, c_in * kh * kw, |co, kern| {
        for ci in 0..c_in {
            for ky in 0..kh {
                let (ylo, yhi) = valid_range(oh, h, ky, p, s);
                for kx in 0..kw {
                    let (xlo, xhi) = valid_range(ow, wd, kx, p, s);
                    let mut acc = T::zero();
                    for n in 0..n_batch {
                        let go = &gout[(n * c_out + co) * oh * ow..][..oh * ow];
                        let inp = &xs[(n * c_in + ci) * h * wd..][..h * wd];
                        for oy in ylo..yhi {
                            let iy = oy * s + ky - p;
                            let ix0 = xlo * s + kx - p;
                            for (j, &gv) in go[oy * ow + xlo..oy * ow + xhi].iter().enumerate() {
                                acc = acc + gv * inp[iy * wd + ix0 + j * s];
                            }
                        }
                    }
                    kern[(ci * kh + ky) * kw + kx] = acc;
                }
            }
        }
    });

    let db = exec::map_indices(c_out, |co| {
        let mut acc = T::zero();
        for n in 0..n_batch {
            for &v in &gout[(n * c_out + co) * oh * ow..][..oh * ow] {
                acc = acc + v;
            }
        }
        acc
    });

    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

pub(crate) fn check_up_conv(x: Shape, w: Shape, bias: Option<Shape>) -> Result<Shape> {
    let [n, c_in, h, wd] = x.dims();
    let [c_out, w_in, kh, kw] = w.dims();
    if (kh, kw) != (2, 2) {
        return Err(Error::config(format!(
            "up_conv_2x2: kernel must be 2x2, weights have shape {w}"
        )));
    }
    if c_in != w_in {
        return Err(Error::config(format!(
            "up_conv_2x2: input has {c_in} channels but weights {w} expect {w_in}"
        )));
    }
    if let Some(b) = bias {
        if b.numel() != c_out {
            return Err(Error::config(format!(
                "up_conv_2x2: bias has {} elements, expected {c_out}",
                b.numel()
            )));
        }
    }
    Ok(Shape::new(n, c_out, 2 * h, 2 * wd))
}

/// Transpose convolution with a 2×2 kernel at stride 2: every input value is
/// scattered through the kernel into its own non-overlapping 2×2 output block.
pub(crate) fn up_conv_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let out_shape = check_up_conv(x.shape(), w.shape(), bias.map(|b| b.shape()))?;
    let [_, c_in, h, wd] = x.shape().dims();
    let c_out = out_shape.c();
    let ow = 2 * wd;
    let (xs, ws) = (x.data(), w.data());
    let mut out = vec![T::zero(); out_shape.numel()];
    exec::for_each_chunk(&mut out, 4 * h * wd, |idx, plane| {
        let (n, co) = (idx / c_out, idx % c_out);
        let b = bias.map_or(T::zero(), |b| b.data()[co]);
        plane.iter_mut().for_each(|v| *v = b);
        for ci in 0..c_in {
            let inp = &xs[(n * c_in + ci) * h * wd..][..h * wd];
            let wk = &ws[(co * c_in + ci) * 4..][..4];
            for iy in 0..h {
                for ky in 0..2 {
                    let orow = &mut plane[(2 * iy + ky) * ow..][..ow];
                    let (w0, w1) = (wk[ky * 2], wk[ky * 2 + 1]);
                    for (pair, &v) in orow.chunks_exact_mut(2).zip(&inp[iy * wd..(iy + 1) * wd]) {
                        pair[0] = pair[0] + v * w0;
                        pair[1] = pair[1] + v * w1;
                    }
                }
            }
        }
    });
    Tensor::from_vec(out_shape, out)
}

pub(crate) fn up_conv_backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, gout: &[T]) -> ConvGrads<T> {
    let [n_batch, c_in, h, wd] = x.shape().dims();
    let c_out = w.shape().dims()[0];
    let (oh, ow) = (2 * h, 2 * wd);
    let (xs, ws) = (x.data(), w.data());

    let mut dx = vec![T::zero(); x.numel()];
    exec::for_each_chunk(&mut dx, h * wd, |idx, plane| {
        let (n, ci) = (idx / c_in, idx % c_in);
        for co in 0..c_out {
            let go = &gout[(n * c_out + co) * oh * ow..][..oh * ow];
            let wk = &ws[(co * c_in + ci) * 4..][..4];
            for iy in 0..h {
                for ky in 0..2 {
                    let grow = &go[(2 * iy + ky) * ow..][..ow];
                    let (w0, w1) = (wk[ky * 2], wk[ky * 2 + 1]);
                    for (d, pair) in plane[iy * wd..(iy + 1) * wd].iter_mut().zip(grow.chunks_exact(2)) {
                        *d = *d + pair[0] * w0 + pair[1] * w1;
                    }
                }
            }
        }
    });

    let mut dw = vec![T::zero(); w.numel()];
    exec::for_each_chunk(&mut dw, c_in * 4, |co, kern| {
        for ci in 0..c_in {
            for k in 0..4 {
                let (ky, kx) = (k / 2, k % 2);
                let mut acc = T::zero();
                for n in 0..n_batch {
                    let go = &gout[(n * c_out + co) * oh * ow..][..oh * ow];
                    let inp = &xs[(n * c_in + ci) * h * wd..][..h * wd];
                    for iy in 0..h {
                        let grow = &go[(2 * iy + ky) * ow..][..ow];
                        for ix in 0..wd {
                            acc = acc + grow[2 * ix + kx] * inp[iy * wd + ix];
                        }
                    }
                }
                kern[ci * 4 + k] = acc;
            }
        }
    });

    let db = exec::map_indices(c_out, |co| {
        let mut acc = T::zero();
        for n in 0..n_batch {
            for &v in &gout[(n * c_out + co) * oh * ow..][..oh * ow] {
                acc = acc + v;
            }
        }
        acc
    });

    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}
