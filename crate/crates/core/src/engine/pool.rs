use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// 2×2 max pooling at stride 2. Returns the pooled tensor and, for every
/// output cell, the flat input index of the selected element. Ties go to the
/// first position in row-major window order.
pub(crate) fn max_pool_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.shape().dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::config(format!(
            "max_pool_2x2: spatial size {h}x{w} must be even in both dimensions"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let out_shape = Shape::new(n, c, oh, ow);
    let xs = x.data();
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut argmax = Vec::with_capacity(out_shape.numel());
    for nc in 0..n * c {
        let base = nc * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if xs[idx] > xs[best] {
                        best = idx;
                    }
                }
                out.push(xs[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(out_shape, out)?, argmax))
}
