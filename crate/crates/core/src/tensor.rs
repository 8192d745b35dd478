use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dimensions of a 4-D tensor in (batch, channels, rows, cols) order.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    /// Shape of a per-channel vector (bias, BN gamma/beta).
    pub const fn vector(len: usize) -> Self {
        Shape([len, 1, 1, 1])
    }

    pub const fn scalar() -> Self {
        Shape([1, 1, 1, 1])
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.0[0]
    }
    #[inline]
    pub fn c(&self) -> usize {
        self.0[1]
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.0[2]
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Elements in one (rows × cols) plane.
    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }

    pub fn dims(&self) -> [usize; 4] {
        self.0
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "({n}, {c}, {h}, {w})")
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Dense row-major N→C→H→W array with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::config(format!(
                "tensor of shape {shape} needs {} values, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
            grad: None,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::Internal(format!(
                "gradient length {} does not match tensor of shape {}",
                grad.len(),
                self.shape
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let [_, cs, hs, ws] = self.shape.0;
        self.data[((n * cs + c) * hs + h) * ws + w]
    }

    /// Contiguous (rows × cols) plane for batch item `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c() + c) * p;
        &self.data[start..start + p]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise conversion to another precision.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| U::lit(v.as_f64())).collect()),
        }
    }

    /// Keeps channels `start..start + len`.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let [n, c, h, w] = self.shape.0;
        if start + len > c {
            return Err(Error::config(format!(
                "channel slice {start}..{} out of range for {c} channels",
                start + len
            )));
        }
        let p = h * w;
        let mut data = Vec::with_capacity(n * len * p);
        for b in 0..n {
            let base = (b * c + start) * p;
            data.extend_from_slice(&self.data[base..base + len * p]);
        }
        Tensor::from_vec(Shape::new(n, len, h, w), data)
    }

    /// Batch item `i` as a tensor of batch size 1.
    pub fn batch_item(&self, i: usize) -> Self {
        let per = self.shape.numel() / self.shape.n().max(1);
        let [_, c, h, w] = self.shape.0;
        Tensor {
            shape: Shape::new(1, c, h, w),
            data: self.data[i * per..(i + 1) * per].to_vec(),
            grad: None,
        }
    }

    /// Stacks batch-1 (or batch-k) tensors along the batch axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::config("cannot stack an empty list of tensors"))?;
        let [_, c, h, w] = first.shape.0;
        let mut n = 0;
        let mut data = Vec::new();
        for t in items {
            let [tn, tc, th, tw] = t.shape.0;
            if (tc, th, tw) != (c, h, w) {
                return Err(Error::config(format!("cannot stack {} with {}", t.shape, first.shape)));
            }
            n += tn;
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(Shape::new(n, c, h, w), data)
    }
}

/// Integer class labels laid out (batch, rows, cols).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelGrid {
    n: usize,
    h: usize,
    w: usize,
    labels: Vec<usize>,
}

impl LabelGrid {
    pub fn new(n: usize, h: usize, w: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != n * h * w {
            return Err(Error::data(format!(
                "label grid {n}x{h}x{w} needs {} labels, got {}",
                n * h * w,
                labels.len()
            )));
        }
        Ok(LabelGrid { n, h, w, labels })
    }

    pub fn filled(n: usize, h: usize, w: usize, label: usize) -> Self {
        LabelGrid {
            n,
            h,
            w,
            labels: vec![label; n * h * w],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn h(&self) -> usize {
        self.h
    }
    pub fn w(&self) -> usize {
        self.w
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [usize] {
        &mut self.labels
    }

    pub fn max_label(&self) -> Option<usize> {
        self.labels.iter().copied().max()
    }

    /// Checks every label is below `k`, naming the first offending pixel.
    pub fn check_range(&self, k: usize) -> Result<()> {
        if let Some(i) = self.labels.iter().position(|&l| l >= k) {
            let plane = self.h * self.w;
            return Err(Error::data(format!(
                "label {} at pixel index {i} (item {}, row {}, col {}) is not below class count {k}",
                self.labels[i],
                i / plane,
                (i % plane) / self.w,
                i % self.w
            )));
        }
        Ok(())
    }

    pub fn item(&self, i: usize) -> LabelGrid {
        let p = self.h * self.w;
        LabelGrid {
            n: 1,
            h: self.h,
            w: self.w,
            labels: self.labels[i * p..(i + 1) * p].to_vec(),
        }
    }

    pub fn stack(items: &[&LabelGrid]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::data("cannot stack an empty list of label grids"))?;
        let mut labels = Vec::new();
        let mut n = 0;
        for g in items {
            if (g.h, g.w) != (first.h, first.w) {
                return Err(Error::data(format!(
                    "cannot stack {}x{} labels with {}x{}",
                    g.h, g.w, first.h, first.w
                )));
            }
            n += g.n;
            labels.extend_from_slice(&g.labels);
        }
        LabelGrid::new(n, first.h, first.w, labels)
    }
}
