//! Eager single-operation API over plain tensors.
//!
//! Each function runs one primitive on a throwaway [`Graph`]; they are the
//! building blocks in their simplest form, used by tests and small tools.
//! Networks drive the [`Graph`] directly.

use super::{BatchMoments, ConvGeometry, Graph, NormStats};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{LabelGrid, Shape, Tensor};

/// Weights (C_out, C_in, kH, kW), bias (C_out) and sampling geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub geometry: ConvGeometry,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, geometry: ConvGeometry) -> Result<Self> {
        let [c_out, c_in, kh, kw] = weight.shape().dims();
        if !(1..=3).contains(&kh) || !(1..=3).contains(&kw) {
            return Err(Error::config(format!("kernel {kh}x{kw} is outside 1..=3")));
        }
        if c_out == 0 || c_in == 0 {
            return Err(Error::config("convolution needs at least one channel"));
        }
        if bias.numel() != c_out {
            return Err(Error::config(format!(
                "bias has {} elements for {c_out} output channels",
                bias.numel()
            )));
        }
        if geometry.stride == 0 {
            return Err(Error::config("stride must be positive"));
        }
        Ok(ConvParams { weight, bias, geometry })
    }

    /// Stride-1 "same" convolution with zero bias.
    pub fn same(weight: Tensor<T>) -> Result<Self> {
        let [c_out, _, k, _] = weight.shape().dims();
        Self::new(weight, Tensor::zeros(Shape::vector(c_out)), ConvGeometry::same(k))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Training,
    Inference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub epsilon: T,
    pub mode: NormMode,
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

impl<T: Scalar> BatchNormParams<T> {
    /// gamma 1, beta 0, running mean 0 / variance 1.
    pub fn new(channels: usize, mode: NormMode) -> Self {
        BatchNormParams {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::lit(BN_MOMENTUM),
            epsilon: T::lit(BN_EPSILON),
            mode,
        }
    }
}

/// Exponential moving average: r ← (1 − m)·r + m·observed.
pub fn update_running<T: Scalar>(running: &mut [T], observed: &[T], momentum: T) {
    for (r, &o) in running.iter_mut().zip(observed) {
        *r = (T::one() - momentum) * *r + momentum * o;
    }
}

fn vector<T: Scalar>(v: &[T]) -> Tensor<T> {
    Tensor::from_vec(Shape::vector(v.len()), v.to_vec()).expect("vector shape")
}

pub fn conv2d<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (xv, w, b) = (g.leaf(x.clone()), g.leaf(p.weight.clone()), g.leaf(p.bias.clone()));
    let y = g.conv2d(xv, w, Some(b), p.geometry)?;
    Ok(g.value(y).clone())
}

pub fn up_conv_2x2<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (xv, w, b) = (g.leaf(x.clone()), g.leaf(p.weight.clone()), g.leaf(p.bias.clone()));
    let y = g.up_conv_2x2(xv, w, Some(b))?;
    Ok(g.value(y).clone())
}

/// Normalizes `x`; in training mode also folds the batch moments into the
/// running statistics.
pub fn batch_norm<T: Scalar>(x: &Tensor<T>, p: &mut BatchNormParams<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let gamma = g.leaf(vector(&p.gamma));
    let beta = g.leaf(vector(&p.beta));
    let stats = match p.mode {
        NormMode::Training => NormStats::Batch,
        NormMode::Inference => NormStats::Running {
            mean: &p.running_mean,
            var: &p.running_var,
        },
    };
    let (y, moments) = g.batch_norm(xv, gamma, beta, p.epsilon, stats)?;
    if let Some(BatchMoments { mean, var }) = moments {
        update_running(&mut p.running_mean, &mean, p.momentum);
        update_running(&mut p.running_var, &var, p.momentum);
    }
    Ok(g.value(y).clone())
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let y = g.relu(xv);
    g.value(y).clone()
}

pub fn max_pool_2x2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let y = g.max_pool_2x2(xv)?;
    Ok(g.value(y).clone())
}

pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (av, bv) = (g.leaf(a.clone()), g.leaf(b.clone()));
    let y = g.concat_channels(av, bv)?;
    Ok(g.value(y).clone())
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (av, bv) = (g.leaf(a.clone()), g.leaf(b.clone()));
    let y = g.add(av, bv)?;
    Ok(g.value(y).clone())
}

pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &LabelGrid) -> Result<T> {
    let mut g = Graph::new();
    let l = g.leaf(logits.clone());
    let loss = g.softmax_cross_entropy(l, labels)?;
    Ok(g.scalar(loss))
}
