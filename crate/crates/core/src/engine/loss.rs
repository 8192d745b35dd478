use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{LabelGrid, Tensor};

pub(crate) fn check_labels<T: Scalar>(logits: &Tensor<T>, labels: &LabelGrid) -> Result<()> {
    let [n, k, h, w] = logits.shape().dims();
    if (labels.n(), labels.h(), labels.w()) != (n, h, w) {
        return Err(Error::data(format!(
            "labels are {}x{}x{} but logits {} need {n}x{h}x{w}",
            labels.n(),
            labels.h(),
            labels.w(),
            logits.shape()
        )));
    }
    labels.check_range(k)
}

/// Per-pixel softmax over the channel axis.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let [n, k, h, w] = logits.shape().dims();
    let plane = h * w;
    let xs = logits.data();
    let mut out = vec![T::zero(); xs.len()];
    for b in 0..n {
        let base = b * k * plane;
        for p in 0..plane {
            let mut m = T::neg_infinity();
            for c in 0..k {
                m = m.max(xs[base + c * plane + p]);
            }
            let mut z = T::zero();
            for c in 0..k {
                let e = (xs[base + c * plane + p] - m).exp();
                out[base + c * plane + p] = e;
                z = z + e;
            }
            for c in 0..k {
                let o = &mut out[base + c * plane + p];
                *o = *o / z;
            }
        }
    }
    Tensor::from_vec(logits.shape(), out).expect("softmax preserves shape")
}

/// Mean over pixels of −log softmax(logits)[label]. Returns the loss and the
/// softmax probabilities for the backward pass.
pub(crate) fn cross_entropy_forward<T: Scalar>(logits: &Tensor<T>, labels: &LabelGrid) -> Result<(T, Vec<T>)> {
    check_labels(logits, labels)?;
    let [n, k, h, w] = logits.shape().dims();
    let plane = h * w;
    let xs = logits.data();
    let probs = softmax(logits).into_data();
    let mut total = 0.0f64;
    for b in 0..n {
        let base = b * k * plane;
        for p in 0..plane {
            let mut m = T::neg_infinity();
            for c in 0..k {
                m = m.max(xs[base + c * plane + p]);
            }
            let mut z = T::zero();
            for c in 0..k {
                z = z + (xs[base + c * plane + p] - m).exp();
            }
            let label = labels.labels()[b * plane + p];
            let lse = m + z.ln();
            total += (lse - xs[base + label * plane + p]).as_f64();
        }
    }
    Ok((T::lit(total / (n * plane) as f64), probs))
}

pub(crate) fn cross_entropy_backward<T: Scalar>(
    shape: crate::tensor::Shape,
    probs: &[T],
    labels: &LabelGrid,
    upstream: T,
) -> Vec<T> {
    let [n, k, h, w] = shape.dims();
    let plane = h * w;
    let scale = upstream / T::lit((n * plane) as f64);
    let mut grad: Vec<T> = probs.iter().map(|&p| p * scale).collect();
    for b in 0..n {
        for p in 0..plane {
            let label = labels.labels()[b * plane + p];
            let g = &mut grad[(b * k + label) * plane + p];
            *g = *g - scale;
        }
    }
    grad
}
