//! Self-checks shared by the test suite and the command line: finite
//! difference verification of every primitive and block family, and the
//! first-conv gradient probe used to contrast block families.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::blocks::{Block, BlockKind, BlockSpec, Role};
use crate::engine::gradcheck::{check_gradients, GradCheckReport, DEFAULT_STEP};
use crate::engine::{ConvGeometry, Graph, NormStats, Var};
use crate::error::{Error, Result};
use crate::layers::{Ctx, Mode};
use crate::params::{Initializer, Parameters};
use crate::tensor::{LabelGrid, Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckCase {
    pub name: String,
    pub shape: Shape,
    pub report: GradCheckReport,
}

struct Gen(ChaCha8Rng);

impl Gen {
    fn new(seed: u64) -> Self {
        Gen(ChaCha8Rng::seed_from_u64(seed))
    }

    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }

    fn vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    fn tensor(&mut self, shape: Shape) -> Tensor<f64> {
        Tensor::from_vec(shape, self.vec(shape.numel())).expect("sized to shape")
    }

    fn labels(&mut self, n: usize, h: usize, w: usize, k: usize) -> LabelGrid {
        use rand::Rng;
        LabelGrid::new(n, h, w, (0..n * h * w).map(|_| self.0.random_range(0..k)).collect()).expect("sized")
    }
}

type Probe<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'a;

fn case(name: &str, shape: Shape, inputs: &[Tensor<f64>], f: &Probe<'_>) -> Result<GradCheckCase> {
    Ok(GradCheckCase {
        name: name.to_string(),
        shape,
        report: check_gradients(inputs, f, DEFAULT_STEP)?,
    })
}

/// Probes a non-scalar node with fixed random weights; a plain sum would
/// hide errors wherever the true gradient is identically zero.
fn probe(g: &mut Graph<f64>, y: Var, weights: &[f64]) -> Result<Var> {
    g.weighted_sum(y, weights.to_vec())
}

/// Every engine primitive on three seeded shapes each.
pub fn primitive_gradchecks(seed: u64) -> Result<Vec<GradCheckCase>> {
    let mut rng = Gen::new(seed);
    let mut out = Vec::new();

    let convs = [
        (Shape::new(2, 2, 5, 5), Shape::new(3, 2, 3, 3), ConvGeometry::same(3)),
        (Shape::new(1, 3, 6, 4), Shape::new(2, 3, 1, 1), ConvGeometry::same(1)),
        (
            Shape::new(2, 1, 7, 7),
            Shape::new(2, 1, 3, 3),
            ConvGeometry { stride: 2, padding: 1 },
        ),
    ];
    for (xs, ws, geom) in convs {
        let inputs = [rng.tensor(xs), rng.tensor(ws), rng.tensor(Shape::vector(ws.n()))];
        let side = |len: usize| (len + 2 * geom.padding - ws.h()) / geom.stride + 1;
        let weights = rng.vec(xs.n() * ws.n() * side(xs.h()) * side(xs.w()));
        out.push(case("conv2d", xs, &inputs, &move |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), geom)?;
            probe(g, y, &weights)
        })?);
    }

    for xs in [Shape::new(4, 2, 3, 3), Shape::new(2, 3, 2, 5), Shape::new(3, 1, 4, 4)] {
        let c = xs.c();
        let gamma: Vec<f64> = (0..c).map(|_| 1.0 + 0.2 * rng.normal()).collect();
        let inputs = [
            rng.tensor(xs),
            Tensor::from_vec(Shape::vector(c), gamma)?,
            rng.tensor(Shape::vector(c)),
        ];
        let weights = rng.vec(xs.numel());
        out.push(case("batch_norm", xs, &inputs, &move |g, v| {
            let (y, _) = g.batch_norm(v[0], v[1], v[2], 1e-5, NormStats::Batch)?;
            probe(g, y, &weights)
        })?);
    }
    {
        let xs = Shape::new(2, 2, 3, 3);
        let inputs = [
            rng.tensor(xs),
            rng.tensor(Shape::vector(2)),
            rng.tensor(Shape::vector(2)),
        ];
        let (mean, var) = (vec![0.3, -0.2], vec![0.5, 2.0]);
        let weights = rng.vec(xs.numel());
        out.push(case("batch_norm_inference", xs, &inputs, &move |g, v| {
            let (y, _) = g.batch_norm(v[0], v[1], v[2], 1e-5, NormStats::Running { mean: &mean, var: &var })?;
            probe(g, y, &weights)
        })?);
    }

    for xs in [Shape::new(2, 2, 4, 4), Shape::new(1, 3, 3, 5), Shape::new(3, 1, 2, 6)] {
        let inputs = [rng.tensor(xs)];
        let weights = rng.vec(xs.numel());
        out.push(case("relu", xs, &inputs, &move |g, v| {
            let y = g.relu(v[0]);
            probe(g, y, &weights)
        })?);
    }

    for xs in [Shape::new(2, 2, 4, 4), Shape::new(1, 3, 6, 2), Shape::new(2, 1, 2, 8)] {
        let inputs = [rng.tensor(xs)];
        let weights = rng.vec(xs.numel() / 4);
        out.push(case("max_pool_2x2", xs, &inputs, &move |g, v| {
            let y = g.max_pool_2x2(v[0])?;
            probe(g, y, &weights)
        })?);
    }

    for (xs, c_out) in [
        (Shape::new(2, 3, 3, 3), 2),
        (Shape::new(1, 1, 2, 4), 3),
        (Shape::new(3, 2, 2, 2), 1),
    ] {
        let inputs = [
            rng.tensor(xs),
            rng.tensor(Shape::new(c_out, xs.c(), 2, 2)),
            rng.tensor(Shape::vector(c_out)),
        ];
        let weights = rng.vec(xs.n() * c_out * xs.plane() * 4);
        out.push(case("up_conv_2x2", xs, &inputs, &move |g, v| {
            let y = g.up_conv_2x2(v[0], v[1], Some(v[2]))?;
            probe(g, y, &weights)
        })?);
    }

    for (xs, cb) in [
        (Shape::new(2, 2, 3, 3), 1),
        (Shape::new(1, 1, 4, 2), 3),
        (Shape::new(3, 2, 2, 2), 2),
    ] {
        let bs = Shape::new(xs.n(), cb, xs.h(), xs.w());
        let inputs = [rng.tensor(xs), rng.tensor(bs)];
        let weights = rng.vec(xs.numel() + bs.numel());
        out.push(case("concat_channels", xs, &inputs, &move |g, v| {
            let y = g.concat_channels(v[0], v[1])?;
            probe(g, y, &weights)
        })?);
    }

    for xs in [Shape::new(2, 2, 3, 3), Shape::new(1, 4, 2, 5), Shape::new(3, 1, 4, 1)] {
        let inputs = [rng.tensor(xs), rng.tensor(xs)];
        let weights = rng.vec(xs.numel());
        out.push(case("add", xs, &inputs, &move |g, v| {
            let y = g.add(v[0], v[1])?;
            probe(g, y, &weights)
        })?);
    }

    for (xs, k) in [
        (Shape::new(2, 3, 4, 4), 3),
        (Shape::new(1, 2, 3, 5), 2),
        (Shape::new(3, 4, 2, 2), 4),
    ] {
        let inputs = [rng.tensor(xs)];
        let labels = rng.labels(xs.n(), xs.h(), xs.w(), k);
        out.push(case("softmax_cross_entropy", xs, &inputs, &move |g, v| {
            g.softmax_cross_entropy(v[0], &labels)
        })?);
    }
    Ok(out)
}

/// Block families checked by [`block_gradchecks`]: name, kind, role, number
/// of stacked convolutions.
pub const BLOCK_CASES: [(&str, BlockKind, Role, usize); 6] = [
    ("plain", BlockKind::Plain, Role::Encoder, 2),
    ("residual", BlockKind::Residual, Role::Encoder, 2),
    ("dense", BlockKind::Dense, Role::Encoder, 2),
    ("dru_encoder", BlockKind::Dru, Role::Encoder, 2),
    ("dru_decoder", BlockKind::Dru, Role::Decoder, 2),
    ("dru_encoder_k3", BlockKind::Dru, Role::Encoder, 3),
];

fn block_params(block: &Block, rng: &mut Gen, init_seed: u64) -> Result<Parameters<f64>> {
    let mut params = Parameters::new();
    block.init(&mut params, &mut Initializer::new(init_seed))?;
    // Move BN affine terms and biases off their defaults so every
    // gradient path is exercised.
    for (name, t) in params.learnable_mut().iter_mut() {
        let base = if name.ends_with(".gamma") { 1.0 } else { 0.0 };
        if base == 1.0 || name.ends_with(".beta") || name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|v| *v = base + 0.2 * rng.normal());
        }
    }
    Ok(params)
}

fn run_block(
    block: &Block,
    g: &mut Graph<f64>,
    params: &Parameters<f64>,
    names: &[String],
    vars: &[Var],
) -> Result<Var> {
    let mut p = params.clone();
    let bound: BTreeMap<String, Var> = names.iter().cloned().zip(vars[1..].iter().copied()).collect();
    let mut ctx = Ctx::with_bindings(g, &mut p, Mode::Training, bound);
    block.forward(&mut ctx, vars[0])
}

/// Parameters along which a batch-statistics BN makes the block output
/// (nearly) constant: every conv bias, since BN removes per-channel
/// shifts, and the weight of a 1×1 conv over a single input channel, since
/// BN(w·x) = sign(w)·BN(x) up to epsilon. Their finite differences measure
/// rounding or the epsilon regime rather than the backward pass, which the
/// remaining weights of the same layers already exercise.
pub fn bn_invariant_params(block: &Block) -> Vec<String> {
    let mut out: Vec<String> = block.convs().iter().map(|c| c.bias_name()).collect();
    out.extend(
        block
            .convs()
            .iter()
            .filter(|c| c.in_channels * c.kernel * c.kernel == 1)
            .map(|c| c.weight_name()),
    );
    out
}

/// Every block family (input and all learnable parameters except
/// [`bn_invariant_params`]) on three seeded shapes each, in training mode.
pub fn block_gradchecks(seed: u64) -> Result<Vec<GradCheckCase>> {
    let mut rng = Gen::new(seed);
    let shapes = [(2, 2, 3, 4, 4), (3, 3, 2, 4, 6), (2, 1, 4, 6, 4)];
    let mut out = Vec::new();
    for (name, kind, role, k) in BLOCK_CASES {
        for (i, &(n, c_in, c_out, h, w)) in shapes.iter().enumerate() {
            let spec = BlockSpec::new(kind, c_in, c_out).with_num_convs(k).with_growth(2, 2);
            let block = Block::new("blk", &spec, role)?;
            let params = block_params(&block, &mut rng, seed + i as u64)?;
            let names: Vec<String> = params
                .learnable()
                .keys()
                .filter(|k| !bn_invariant_params(&block).contains(k))
                .cloned()
                .collect();
            let xs = Shape::new(n, c_in, h, w);
            let mut inputs = vec![rng.tensor(xs)];
            inputs.extend(names.iter().map(|k| params.learnable()[k].clone()));
            let weights = rng.vec(n * block.out_channels() * h * w);
            let f = |g: &mut Graph<f64>, v: &[Var]| {
                let y = run_block(&block, g, &params, &names, v)?;
                probe(g, y, &weights)
            };
            out.push(case(name, xs, &inputs, &f)?);
        }
    }
    Ok(out)
}

/// Primitive then block checks.
pub fn all_gradchecks(seed: u64) -> Result<Vec<GradCheckCase>> {
    let mut all = primitive_gradchecks(seed)?;
    all.extend(block_gradchecks(seed.wrapping_add(1))?);
    Ok(all)
}

/// L2 norm of ∂(Σ output)/∂(first conv weight) with the second conv's
/// weight held at zero, for a freshly initialised block on seeded input.
pub fn first_conv_gradient_norm(kind: BlockKind, role: Role, seed: u64) -> Result<f64> {
    let spec = BlockSpec::new(kind, 2, 3);
    let block = Block::new("blk", &spec, role)?;
    let convs = block.convs();
    if convs.len() < 2 {
        return Err(Error::config(format!("{kind} block has fewer than two convolutions")));
    }
    let (first, second) = (convs[0].weight_name(), convs[1].weight_name());
    let mut params: Parameters<f64> = Parameters::new();
    block.init(&mut params, &mut Initializer::new(seed))?;
    params
        .get_mut(&second)
        .expect("initialised")
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = 0.0);
    let x = Gen::new(seed ^ 0x5eed).tensor(Shape::new(2, 2, 8, 8));
    let mut graph = Graph::new();
    let xv = graph.leaf(x);
    let mut ctx = Ctx::new(&mut graph, &mut params, Mode::Training);
    let y = block.forward(&mut ctx, xv)?;
    let w1 = ctx.param(&first)?;
    let loss = ctx.graph.sum(y);
    ctx.graph.backward(loss)?;
    let g = ctx.graph.grad(w1).map(<[f64]>::to_vec).unwrap_or_default();
    Ok(g.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Runs a DRU block with `num_convs = 2` through both the general k-stage
/// formula and the dedicated two-stage path; true when the outputs are
/// bitwise identical.
pub fn dru_paths_agree(role: Role, seed: u64) -> Result<bool> {
    let spec = BlockSpec::new(BlockKind::Dru, 3, 4).with_num_convs(2);
    let block = Block::new("blk", &spec, role)?;
    let mut params: Parameters<f32> = Parameters::new();
    block.init(&mut params, &mut Initializer::new(seed))?;
    let x: Tensor<f32> = Gen::new(seed).tensor(Shape::new(2, 3, 8, 8)).cast();
    let run = |general: bool| -> Result<Vec<u32>> {
        let mut p = params.clone();
        let mut graph = Graph::new();
        let xv = graph.leaf(x.clone());
        let mut ctx = Ctx::new(&mut graph, &mut p, Mode::Training);
        let y = match (&block, general) {
            (Block::DruEncoder(b), true) => b.forward_general(&mut ctx, xv)?,
            (Block::DruEncoder(b), false) => b.forward_pair(&mut ctx, xv)?,
            (Block::DruDecoder(b), true) => b.forward_general(&mut ctx, xv)?,
            (Block::DruDecoder(b), false) => b.forward_pair(&mut ctx, xv)?,
            _ => return Err(Error::Internal("not a DRU block".into())),
        };
        Ok(graph.value(y).data().iter().map(|v| v.to_bits()).collect())
    };
    Ok(run(true)? == run(false)?)
}
