use drunet_core::blocks::{BlockKind, Role};
use drunet_core::diagnostics::{block_gradchecks, dru_paths_agree, first_conv_gradient_norm, primitive_gradchecks};
use drunet_core::engine::gradcheck::DEFAULT_TOLERANCE;

#[test]
fn primitives_match_finite_differences() {
    let cases = primitive_gradchecks(17).unwrap();
    for name in [
        "conv2d",
        "batch_norm",
        "relu",
        "max_pool_2x2",
        "up_conv_2x2",
        "concat_channels",
        "add",
        "softmax_cross_entropy",
    ] {
        assert!(cases.iter().filter(|c| c.name == name).count() >= 3, "{name}");
    }
    for c in &cases {
        assert!(
            c.report.passes(DEFAULT_TOLERANCE),
            "{} {}: {:?}",
            c.name,
            c.shape,
            c.report
        );
    }
}

#[test]
fn blocks_match_finite_differences() {
    for c in block_gradchecks(18).unwrap() {
        assert!(
            c.report.passes(DEFAULT_TOLERANCE),
            "{} {}: {:?}",
            c.name,
            c.shape,
            c.report
        );
    }
}

#[test]
fn zeroed_second_conv_blocks_plain_and_residual_only() {
    for kind in [BlockKind::Plain, BlockKind::Residual] {
        assert_eq!(first_conv_gradient_norm(kind, Role::Encoder, 3).unwrap(), 0.0, "{kind}");
    }
    for role in [Role::Encoder, Role::Decoder] {
        let g = first_conv_gradient_norm(BlockKind::Dru, role, 3).unwrap();
        assert!(g > 1e-8, "{role:?}: {g}");
    }
}

#[test]
fn dru_general_and_pair_paths_are_bitwise_equal() {
    for seed in 0..3 {
        assert!(dru_paths_agree(Role::Encoder, seed).unwrap());
        assert!(dru_paths_agree(Role::Decoder, seed).unwrap());
    }
}

#[test]
fn biases_before_batch_norm_get_no_gradient() {
    use drunet_core::blocks::{Block, BlockSpec};
    use drunet_core::diagnostics::bn_invariant_params;
    use drunet_core::engine::Graph;
    use drunet_core::layers::{Ctx, Mode};
    use drunet_core::params::{Initializer, Parameters};
    use drunet_core::tensor::{Shape, Tensor};

    let block = Block::new("b", &BlockSpec::new(BlockKind::Plain, 2, 3), Role::Encoder).unwrap();
    let mut params: Parameters<f64> = Parameters::new();
    block.init(&mut params, &mut Initializer::new(1)).unwrap();
    let x = Tensor::from_vec(
        Shape::new(2, 2, 4, 4),
        (0..64).map(|i| ((i * 37) % 11) as f64 - 5.0).collect(),
    )
    .unwrap();
    let mut graph = Graph::new();
    let xv = graph.leaf(x);
    let mut ctx = Ctx::new(&mut graph, &mut params, Mode::Training);
    let y = block.forward(&mut ctx, xv).unwrap();
    let w: Vec<f64> = (0..ctx.graph.value(y).numel()).map(|i| (i % 7) as f64 - 3.0).collect();
    let loss = ctx.graph.weighted_sum(y, w).unwrap();
    ctx.graph.backward(loss).unwrap();
    let grads = ctx.gradients();
    for name in bn_invariant_params(&block) {
        assert!(
            grads[&name].iter().all(|g| g.abs() < 1e-12),
            "{name}: {:?}",
            grads[&name]
        );
    }
}

#[test]
fn single_channel_pointwise_weight_before_batch_norm_is_nearly_inert() {
    use drunet_core::blocks::{Block, BlockSpec};
    use drunet_core::diagnostics::bn_invariant_params;
    use drunet_core::engine::Graph;
    use drunet_core::layers::{Ctx, Mode};
    use drunet_core::params::{Initializer, Parameters};
    use drunet_core::tensor::{Shape, Tensor};

    let block = Block::new(
        "b",
        &BlockSpec::new(BlockKind::Dense, 1, 4).with_growth(2, 2),
        Role::Encoder,
    )
    .unwrap();
    let inert = "b.unit1.bottleneck.weight".to_string();
    assert!(bn_invariant_params(&block).contains(&inert));
    let mut params: Parameters<f64> = Parameters::new();
    block.init(&mut params, &mut Initializer::new(2)).unwrap();
    let x = Tensor::from_vec(
        Shape::new(2, 1, 4, 4),
        (0..32).map(|i| ((i * 13) % 9) as f64 - 4.0).collect(),
    )
    .unwrap();
    let mut graph = Graph::new();
    let xv = graph.leaf(x);
    let mut ctx = Ctx::new(&mut graph, &mut params, Mode::Training);
    let y = block.forward(&mut ctx, xv).unwrap();
    let w: Vec<f64> = (0..ctx.graph.value(y).numel()).map(|i| (i % 5) as f64 - 2.0).collect();
    let loss = ctx.graph.weighted_sum(y, w).unwrap();
    ctx.graph.backward(loss).unwrap();
    let grads = ctx.gradients();
    let rms = |g: &[f64]| (g.iter().map(|v| v * v).sum::<f64>() / g.len() as f64).sqrt();
    let inert_rms = rms(&grads[&inert]);
    let conv_rms = rms(&grads["b.unit1.conv.weight"]);
    assert!(inert_rms < 1e-3 * conv_rms, "{inert_rms} vs {conv_rms}");
}
