//! Per-channel batch normalization over all N·H·W positions.

use crate::error::{Error, Result};
use crate::exec;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Statistics source for a normalization pass.
#[derive(Clone, Copy, Debug)]
pub enum NormStats<'a, T> {
    /// Normalize with the current batch's mean and (biased) variance.
    Batch,
    /// Normalize with externally tracked running statistics.
    Running { mean: &'a [T], var: &'a [T] },
}

/// Batch moments observed during a training-mode pass. `var` is the unbiased
/// estimate used for running-statistic updates.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMoments<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub(crate) struct NormForward<T> {
    pub output: Tensor<T>,
    pub x_hat: Vec<T>,
    pub inv_std: Vec<T>,
    pub moments: Option<BatchMoments<T>>,
}

fn channel_values<T: Scalar>(x: &Tensor<T>, c: usize) -> impl Iterator<Item = T> + '_ {
    let [n, _, _, _] = x.shape().dims();
    (0..n).flat_map(move |b| x.plane(b, c).iter().copied())
}

pub(crate) fn batch_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
    stats: NormStats<'_, T>,
) -> Result<NormForward<T>> {
    let shape = x.shape();
    let c = shape.c();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::config(format!(
            "batch_norm: input {shape} has {c} channels but parameters have {} (gamma) / {} (beta)",
            gamma.len(),
            beta.len()
        )));
    }
    let count = shape.n() * shape.plane();
    if count == 0 {
        return Err(Error::config(format!("batch_norm: empty input {shape}")));
    }

    let (mean, var_biased, moments) = match stats {
        NormStats::Batch => {
            let per_channel = exec::map_indices(c, |ch| {
                let cnt = T::lit(count as f64);
                let mean = channel_values(x, ch).fold(T::zero(), |a, v| a + v) / cnt;
                let ss = channel_values(x, ch).fold(T::zero(), |a, v| a + (v - mean) * (v - mean));
                let unbiased = if count > 1 { ss / T::lit((count - 1) as f64) } else { ss };
                (mean, ss / cnt, unbiased)
            });
            let mean: Vec<T> = per_channel.iter().map(|t| t.0).collect();
            let var: Vec<T> = per_channel.iter().map(|t| t.1).collect();
            let unbiased = per_channel.iter().map(|t| t.2).collect();
            let moments = BatchMoments {
                mean: mean.clone(),
                var: unbiased,
            };
            (mean, var, Some(moments))
        }
        NormStats::Running { mean, var } => {
            if mean.len() != c || var.len() != c {
                return Err(Error::config(format!(
                    "batch_norm: running statistics have {} channels, input has {c}",
                    mean.len()
                )));
            }
            (mean.to_vec(), var.to_vec(), None)
        }
    };

    let inv_std: Vec<T> = var_biased.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let plane = shape.plane();
    let mut x_hat = vec![T::zero(); x.numel()];
    let mut out = vec![T::zero(); x.numel()];
    for (i, (&v, (xh, o))) in x.data().iter().zip(x_hat.iter_mut().zip(out.iter_mut())).enumerate() {
        let ch = (i / plane) % c;
        *xh = (v - mean[ch]) * inv_std[ch];
        *o = gamma[ch] * *xh + beta[ch];
    }
    Ok(NormForward {
        output: Tensor::from_vec(shape, out)?,
        x_hat,
        inv_std,
        moments,
    })
}

pub(crate) struct NormGrads<T> {
    pub input: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub(crate) fn batch_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    x_hat: &[T],
    inv_std: &[T],
    batch_stats: bool,
    gout: &[T],
) -> NormGrads<T> {
    let shape = x.shape();
    let [n, c, _, _] = shape.dims();
    let plane = shape.plane();
    let count = n * plane;

    let sums = exec::map_indices(c, |ch| {
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for (&g, &xh) in gout[off..off + plane].iter().zip(&x_hat[off..off + plane]) {
                sum_g = sum_g + g;
                sum_gx = sum_gx + g * xh;
            }
        }
        (sum_g, sum_gx)
    });

    let cnt = T::lit(count as f64);
    let mut dx = vec![T::zero(); x.numel()];
    for (i, d) in dx.iter_mut().enumerate() {
        let ch = (i / plane) % c;
        let scale = gamma[ch] * inv_std[ch];
        *d = if batch_stats {
            let (sg, sgx) = sums[ch];
            scale * (gout[i] - sg / cnt - x_hat[i] * sgx / cnt)
        } else {
            scale * gout[i]
        };
    }
    NormGrads {
        input: dx,
        gamma: sums.iter().map(|s| s.1).collect(),
        beta: sums.iter().map(|s| s.0).collect(),
    }
}
