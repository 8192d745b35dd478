//! Named layers that pull their tensors from a [`Parameters`] store onto a
//! [`Graph`] through a [`Ctx`].

use std::collections::BTreeMap;

use crate::engine::ops::{update_running, BN_EPSILON, BN_MOMENTUM};
use crate::engine::{ConvGeometry, Graph, NormStats, Var};
use crate::error::{Error, Result};
use crate::params::{Initializer, Parameters};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub use crate::engine::ops::NormMode as Mode;

/// One forward pass: the graph being recorded, the parameter store, and
/// the graph leaf already created for each parameter name.
pub struct Ctx<'a, T: Scalar> {
    pub graph: &'a mut Graph<T>,
    params: &'a mut Parameters<T>,
    bound: BTreeMap<String, Var>,
    mode: Mode,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(graph: &'a mut Graph<T>, params: &'a mut Parameters<T>, mode: Mode) -> Self {
        Ctx {
            graph,
            params,
            bound: BTreeMap::new(),
            mode,
        }
    }

    /// Like [`Ctx::new`] but with some parameters already bound to existing
    /// graph nodes (used when a caller owns the leaves, e.g. gradient checks).
    pub fn with_bindings(
        graph: &'a mut Graph<T>,
        params: &'a mut Parameters<T>,
        mode: Mode,
        bound: BTreeMap<String, Var>,
    ) -> Self {
        Ctx {
            graph,
            params,
            bound,
            mode,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn params(&self) -> &Parameters<T> {
        self.params
    }

    /// Graph node for learnable parameter `name`, created on first use.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self
            .params
            .learnable()
            .get(name)
            .ok_or_else(|| Error::Internal(format!("missing learnable parameter {name}")))?
            .clone();
        let v = self.graph.leaf(t);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bindings(&self) -> &BTreeMap<String, Var> {
        &self.bound
    }

    /// Gradient of every bound parameter after a backward pass. Parameters
    /// the loss does not depend on get a zero gradient.
    pub fn gradients(&self) -> BTreeMap<String, Vec<T>> {
        self.bound
            .iter()
            .map(|(name, &v)| {
                let g = self
                    .graph
                    .grad(v)
                    .map_or_else(|| vec![T::zero(); self.graph.value(v).numel()], <[T]>::to_vec);
                (name.clone(), g)
            })
            .collect()
    }
}

fn check_channels(layer: &str, expected: usize, shape: Shape) -> Result<()> {
    if shape.c() != expected {
        return Err(Error::config(format!(
            "{layer}: expected {expected} input channels, got input of shape {shape}"
        )));
    }
    Ok(())
}

/// Stride-1 convolution with "same" padding and a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv {
    pub fn new(name: impl Into<String>, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Conv {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }

    pub fn init<T: Scalar>(&self, params: &mut Parameters<T>, init: &mut Initializer) -> Result<()> {
        let shape = Shape::new(self.out_channels, self.in_channels, self.kernel, self.kernel);
        let fan_in = self.in_channels * self.kernel * self.kernel;
        params.insert_learnable(self.weight_name(), init.he_normal(shape, fan_in))?;
        params.insert_learnable(self.bias_name(), Tensor::zeros(Shape::vector(self.out_channels)))
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        check_channels(&self.name, self.in_channels, ctx.graph.shape(x))?;
        let w = ctx.param(&self.weight_name())?;
        let b = ctx.param(&self.bias_name())?;
        ctx.graph.conv2d(x, w, Some(b), ConvGeometry::same(self.kernel))
    }
}

/// Learnable 2× upsampling (transpose convolution, 2×2 kernel, stride 2).
#[derive(Clone, Debug, PartialEq)]
pub struct UpConv {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl UpConv {
    pub fn new(name: impl Into<String>, in_channels: usize, out_channels: usize) -> Self {
        UpConv {
            name: name.into(),
            in_channels,
            out_channels,
        }
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * 4 + self.out_channels
    }

    pub fn init<T: Scalar>(&self, params: &mut Parameters<T>, init: &mut Initializer) -> Result<()> {
        let shape = Shape::new(self.out_channels, self.in_channels, 2, 2);
        params.insert_learnable(
            format!("{}.weight", self.name),
            init.he_normal(shape, self.in_channels * 4),
        )?;
        params.insert_learnable(
            format!("{}.bias", self.name),
            Tensor::zeros(Shape::vector(self.out_channels)),
        )
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        check_channels(&self.name, self.in_channels, ctx.graph.shape(x))?;
        let w = ctx.param(&format!("{}.weight", self.name))?;
        let b = ctx.param(&format!("{}.bias", self.name))?;
        ctx.graph.up_conv_2x2(x, w, Some(b))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
    pub epsilon: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        BatchNorm {
            name: name.into(),
            channels,
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn init<T: Scalar>(&self, params: &mut Parameters<T>) -> Result<()> {
        let c = Shape::vector(self.channels);
        params.insert_learnable(format!("{}.gamma", self.name), Tensor::ones(c))?;
        params.insert_learnable(format!("{}.beta", self.name), Tensor::zeros(c))?;
        params.insert_buffer(format!("{}.running_mean", self.name), Tensor::zeros(c))?;
        params.insert_buffer(format!("{}.running_var", self.name), Tensor::ones(c))
    }

    /// Training mode normalizes with batch statistics and updates the
    /// running buffers; inference mode reads the buffers only.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        check_channels(&self.name, self.channels, ctx.graph.shape(x))?;
        let gamma = ctx.param(&format!("{}.gamma", self.name))?;
        let beta = ctx.param(&format!("{}.beta", self.name))?;
        let mean_name = format!("{}.running_mean", self.name);
        let var_name = format!("{}.running_var", self.name);
        let eps = T::lit(self.epsilon);
        match ctx.mode {
            Mode::Training => {
                let (y, moments) = ctx.graph.batch_norm(x, gamma, beta, eps, NormStats::Batch)?;
                let moments = moments.expect("batch statistics requested");
                let m = T::lit(self.momentum);
                for (name, observed) in [(&mean_name, &moments.mean), (&var_name, &moments.var)] {
                    let buf = ctx
                        .params
                        .buffers_mut()
                        .get_mut(name.as_str())
                        .ok_or_else(|| Error::Internal(format!("missing buffer {name}")))?;
                    update_running(buf.data_mut(), observed, m);
                }
                Ok(y)
            }
            Mode::Inference => {
                let mean = ctx.params.require(&mean_name)?.data();
                let var = ctx.params.require(&var_name)?.data();
                let (y, _) = ctx
                    .graph
                    .batch_norm(x, gamma, beta, eps, NormStats::Running { mean, var })?;
                Ok(y)
            }
        }
    }
}

/// Convolution followed by batch normalization, no activation.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl ConvBn {
    pub fn new(conv_name: String, bn_name: String, c_in: usize, c_out: usize, kernel: usize) -> Self {
        ConvBn {
            conv: Conv::new(conv_name, c_in, c_out, kernel),
            bn: BatchNorm::new(bn_name, c_out),
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.param_count()
    }

    pub fn init<T: Scalar>(&self, params: &mut Parameters<T>, init: &mut Initializer) -> Result<()> {
        self.conv.init(params, init)?;
        self.bn.init(params)
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        self.bn.forward(ctx, y)
    }

    /// Conv → BN → ReLU.
    pub fn forward_relu<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.forward(ctx, x)?;
        Ok(ctx.graph.relu(y))
    }
}
