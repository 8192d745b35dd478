use std::collections::BTreeMap;

use crate::data::Sample;
use crate::engine::Graph;
use crate::error::Result;
use crate::layers::{Ctx, Mode};
use crate::metrics::{argmax_labels, segmentation_metrics, ClassMetrics};
use crate::network::Network;
use crate::params::Parameters;
use crate::tensor::{LabelGrid, Tensor};

/// Forward pass, cross-entropy and backward on one batch in training mode.
/// Returns the loss and the gradient of every learnable parameter; BN
/// running buffers in `params` are updated.
pub fn train_step(
    net: &Network,
    params: &mut Parameters<f32>,
    batch: &[&Sample],
) -> Result<(f64, BTreeMap<String, Vec<f32>>)> {
    let images: Vec<&Tensor<f32>> = batch.iter().map(|s| &s.image).collect();
    let masks: Vec<&LabelGrid> = batch.iter().map(|s| &s.mask).collect();
    let x = Tensor::stack(&images)?;
    let labels = LabelGrid::stack(&masks)?;
    let mut graph = Graph::new();
    let xv = graph.leaf(x);
    let mut ctx = Ctx::new(&mut graph, params, Mode::Training);
    let logits = net.forward(&mut ctx, xv)?;
    let loss = ctx.graph.softmax_cross_entropy(logits, &labels)?;
    ctx.graph.backward(loss)?;
    let value = ctx.graph.scalar(loss) as f64;
    let mut grads = ctx.gradients();
    for (name, t) in ctx.params().learnable() {
        grads.entry(name.clone()).or_insert_with(|| vec![0.0; t.numel()]);
    }
    Ok((value, grads))
}

/// Inference-mode argmax labels for each sample, in input order.
pub fn predict(net: &Network, params: &Parameters<f32>, samples: &[Sample]) -> Result<Vec<LabelGrid>> {
    samples
        .iter()
        .map(|s| Ok(argmax_labels(&net.logits(params, &s.image)?)))
        .collect()
}

/// Per-image, per-class metrics of inference-mode predictions.
pub fn evaluate(net: &Network, params: &Parameters<f32>, samples: &[Sample]) -> Result<Vec<Vec<ClassMetrics>>> {
    let k = net.config().num_classes;
    predict(net, params, samples)?
        .iter()
        .zip(samples)
        .map(|(pred, s)| segmentation_metrics(pred, &s.mask, k))
        .collect()
}
