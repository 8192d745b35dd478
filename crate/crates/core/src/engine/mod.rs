//! Tape-based reverse-mode differentiation over 4-D tensors.
//!
//! A [`Graph`] records every operation applied during a forward pass as a
//! node holding its output value and whatever the backward rule needs.
//! [`Graph::backward`] walks the tape in reverse from a scalar node and
//! leaves a populated gradient on every node that influences it.
//!
//! ```
//! use drunet_core::engine::Graph;
//! use drunet_core::tensor::{Shape, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.leaf(Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![-1.0, 2.0]).unwrap());
//! let y = g.relu(x);
//! let loss = g.sum(y);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0]);
//! ```

mod conv;
pub mod gradcheck;
mod loss;
mod norm;
pub mod ops;
mod pool;

pub use conv::ConvGeometry;
pub use loss::softmax;
pub use norm::{BatchMoments, NormStats};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{LabelGrid, Shape, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    UpConv {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        x_hat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu {
        x: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<T>,
        labels: LabelGrid,
    },
    Sum {
        x: Var,
    },
    WeightedSum {
        x: Var,
        weights: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input or parameter tensor.
    pub fn leaf(&mut self, mut value: Tensor<T>) -> Var {
        value.take_grad();
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last [`backward`](Self::backward) target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeometry) -> Result<Var> {
        let out = conv::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }))
    }

    /// Learnable 2× upsampling: transpose convolution, 2×2 kernel, stride 2.
    pub fn up_conv_2x2(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = conv::up_conv_forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.push(out, Op::UpConv { x, w, b }))
    }

    /// Batch normalization. In [`NormStats::Batch`] mode the observed moments
    /// are returned so the caller can update its running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
        stats: NormStats<'_, T>,
    ) -> Result<(Var, Option<BatchMoments<T>>)> {
        let batch_stats = matches!(stats, NormStats::Batch);
        let fwd = norm::batch_norm_forward(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
            stats,
        )?;
        let v = self.push(
            fwd.output,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat: fwd.x_hat,
                inv_std: fwd.inv_std,
                batch_stats,
            },
        );
        Ok((v, fwd.moments))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v.max(T::zero())).collect();
        let out = Tensor::from_vec(src.shape(), data).expect("relu preserves shape");
        self.push(out, Op::Relu { x })
    }

    pub fn max_pool_2x2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = pool::max_pool_forward(self.value(x))?;
        Ok(self.push(out, Op::MaxPool { x, argmax }))
    }

    /// Channel concatenation with `a`'s channels first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let [na, ca, ha, wa] = ta.shape().dims();
        let [nb, cb, hb, wb] = tb.shape().dims();
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::config(format!(
                "concat_channels: {} and {} differ in batch or spatial size",
                ta.shape(),
                tb.shape()
            )));
        }
        let p = ha * wa;
        let mut data = Vec::with_capacity(ta.numel() + tb.numel());
        for n in 0..na {
            data.extend_from_slice(&ta.data()[n * ca * p..(n + 1) * ca * p]);
            data.extend_from_slice(&tb.data()[n * cb * p..(n + 1) * cb * p]);
        }
        let out = Tensor::from_vec(Shape::new(na, ca + cb, ha, wa), data)?;
        Ok(self.push(out, Op::Concat { a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::config(format!(
                "add: shapes {} and {} differ",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_vec(ta.shape(), data)?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    /// Mean per-pixel softmax cross-entropy; returns a scalar node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &LabelGrid) -> Result<Var> {
        let (loss, probs) = loss::cross_entropy_forward(self.value(logits), labels)?;
        let out = Tensor::full(Shape::scalar(), loss);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.clone(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().fold(T::zero(), |a, &v| a + v);
        self.push(Tensor::full(Shape::scalar(), total), Op::Sum { x })
    }

    /// Σ weights[i]·x[i], a scalar projection used to probe gradients.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<T>) -> Result<Var> {
        let src = self.value(x);
        if weights.len() != src.numel() {
            return Err(Error::config(format!(
                "weighted_sum: {} weights for tensor {}",
                weights.len(),
                src.shape()
            )));
        }
        let total = src.data().iter().zip(&weights).fold(T::zero(), |a, (&v, &w)| a + v * w);
        Ok(self.push(Tensor::full(Shape::scalar(), total), Op::WeightedSum { x, weights }))
    }

    /// Back-propagates from the scalar node `target`, replacing any
    /// gradients left by a previous call.
    pub fn backward(&mut self, target: Var) -> Result<()> {
        if self.value(target).numel() != 1 {
            return Err(Error::Internal(format!(
                "backward target must be a scalar, got shape {}",
                self.shape(target)
            )));
        }
        for node in &mut self.nodes {
            node.value.take_grad();
        }
        self.nodes[target.0]
            .value
            .set_grad(vec![T::one()])
            .expect("scalar gradient");

        for i in (0..=target.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let Some(gout) = node.value.grad() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d { x, w, b, geom } => {
                    let grads = conv::conv2d_backward(&before[x.0].value, &before[w.0].value, *geom, gout);
                    accumulate(before, *x, grads.input);
                    accumulate(before, *w, grads.weight);
                    if let Some(b) = b {
                        accumulate(before, *b, grads.bias);
                    }
                }
                Op::UpConv { x, w, b } => {
                    let grads = conv::up_conv_backward(&before[x.0].value, &before[w.0].value, gout);
                    accumulate(before, *x, grads.input);
                    accumulate(before, *w, grads.weight);
                    if let Some(b) = b {
                        accumulate(before, *b, grads.bias);
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    x_hat,
                    inv_std,
                    batch_stats,
                } => {
                    let grads = norm::batch_norm_backward(
                        &before[x.0].value,
                        before[gamma.0].value.data(),
                        x_hat,
                        inv_std,
                        *batch_stats,
                        gout,
                    );
                    accumulate(before, *x, grads.input);
                    accumulate(before, *gamma, grads.gamma);
                    accumulate(before, *beta, grads.beta);
                }
                Op::Relu { x } => {
                    let g = before[x.0]
                        .value
                        .data()
                        .iter()
                        .zip(gout)
                        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                        .collect();
                    accumulate(before, *x, g);
                }
                Op::MaxPool { x, argmax } => {
                    let mut g = vec![T::zero(); before[x.0].value.numel()];
                    for (&idx, &gv) in argmax.iter().zip(gout) {
                        g[idx] = g[idx] + gv;
                    }
                    accumulate(before, *x, g);
                }
                Op::Concat { a, b } => {
                    let [n, ca, h, w] = before[a.0].value.shape().dims();
                    let cb = before[b.0].value.shape().c();
                    let p = h * w;
                    let mut ga = Vec::with_capacity(n * ca * p);
                    let mut gb = Vec::with_capacity(n * cb * p);
                    for item in gout.chunks_exact((ca + cb) * p) {
                        ga.extend_from_slice(&item[..ca * p]);
                        gb.extend_from_slice(&item[ca * p..]);
                    }
                    accumulate(before, *a, ga);
                    accumulate(before, *b, gb);
                }
                Op::Add { a, b } => {
                    accumulate(before, *a, gout.to_vec());
                    accumulate(before, *b, gout.to_vec());
                }
                Op::CrossEntropy { logits, probs, labels } => {
                    let shape = before[logits.0].value.shape();
                    let g = loss::cross_entropy_backward(shape, probs, labels, gout[0]);
                    accumulate(before, *logits, g);
                }
                Op::Sum { x } => {
                    let g = vec![gout[0]; before[x.0].value.numel()];
                    accumulate(before, *x, g);
                }
                Op::WeightedSum { x, weights } => {
                    let g = weights.iter().map(|&w| w * gout[0]).collect();
                    accumulate(before, *x, g);
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(nodes: &mut [Node<T>], v: Var, g: Vec<T>) {
    let value = &mut nodes[v.0].value;
    match value.take_grad() {
        None => value.set_grad(g),
        Some(mut acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a = *a + b;
            }
            value.set_grad(acc)
        }
    }
    .expect("gradient shape matches its node");
}
