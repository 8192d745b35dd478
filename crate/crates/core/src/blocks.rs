//! Block families compared by the network: plain, residual, dense, and the
//! dense-residual (DRU) encoder/decoder pair.
//!
//! Every block preserves spatial size. Channel arithmetic:
//!
//! | block          | output channels                 |
//! |----------------|---------------------------------|
//! | plain          | `out`                           |
//! | residual       | `out`                           |
//! | dense level    | `out` (after the transition)    |
//! | DRU encoder    | `in + out` (input concatenated) |
//! | DRU decoder    | `out`                           |

use std::fmt;
use std::str::FromStr;

use crate::engine::Var;
use crate::error::{Error, Result};
use crate::layers::{Conv, ConvBn, Ctx};
use crate::params::{Initializer, Parameters};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Plain,
    Residual,
    Dense,
    Dru,
}

impl BlockKind {
    pub const ALL: [BlockKind; 4] = [BlockKind::Plain, BlockKind::Residual, BlockKind::Dense, BlockKind::Dru];

    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::Plain => "plain",
            BlockKind::Residual => "residual",
            BlockKind::Dense => "dense",
            BlockKind::Dru => "dru",
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "plain" | "unet" => Ok(BlockKind::Plain),
            "residual" | "res" => Ok(BlockKind::Residual),
            "dense" => Ok(BlockKind::Dense),
            "dru" => Ok(BlockKind::Dru),
            other => Err(Error::config(format!(
                "unknown block kind {other:?} (expected plain, residual, dense or dru)"
            ))),
        }
    }
}

/// Position of a block in the encoder-decoder; only DRU blocks differ by role.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Encoder,
    Decoder,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Conv-BN units in a DRU block.
    pub num_convs: usize,
    /// Channels added per dense unit.
    pub growth_rate: usize,
    pub num_dense_units: usize,
}

impl BlockSpec {
    pub fn new(kind: BlockKind, in_channels: usize, out_channels: usize) -> Self {
        BlockSpec {
            kind,
            in_channels,
            out_channels,
            num_convs: 2,
            growth_rate: out_channels.div_ceil(2).max(1),
            num_dense_units: 2,
        }
    }

    pub fn with_num_convs(mut self, k: usize) -> Self {
        self.num_convs = k;
        self
    }

    pub fn with_growth(mut self, growth_rate: usize, units: usize) -> Self {
        self.growth_rate = growth_rate;
        self.num_dense_units = units;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config(format!(
                "{} block needs positive channel counts, got {} -> {}",
                self.kind, self.in_channels, self.out_channels
            )));
        }
        match self.kind {
            BlockKind::Dru if self.num_convs < 2 => Err(Error::config(format!(
                "DRU block needs num_convs >= 2, got {}",
                self.num_convs
            ))),
            BlockKind::Dense if self.growth_rate == 0 => Err(Error::config("dense block needs a positive growth rate")),
            BlockKind::Dense if self.num_dense_units < 2 => Err(Error::config(format!(
                "dense block needs num_dense_units >= 2, got {}",
                self.num_dense_units
            ))),
            _ => Ok(()),
        }
    }
}

fn conv_bn(prefix: &str, idx: usize, c_in: usize, c_out: usize, kernel: usize) -> ConvBn {
    ConvBn::new(
        format!("{prefix}.conv{idx}"),
        format!("{prefix}.bn{idx}"),
        c_in,
        c_out,
        kernel,
    )
}

/// ReLU(BN2(Conv2(ReLU(BN1(Conv1(x)))))).
#[derive(Clone, Debug, PartialEq)]
pub struct PlainBlock {
    pub stages: [ConvBn; 2],
}

impl PlainBlock {
    pub fn new(prefix: &str, c_in: usize, c_out: usize) -> Self {
        PlainBlock {
            stages: [conv_bn(prefix, 1, c_in, c_out, 3), conv_bn(prefix, 2, c_out, c_out, 3)],
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.stages[0].forward_relu(ctx, x)?;
        self.stages[1].forward_relu(ctx, h)
    }
}

/// ReLU(BN2(Conv2(ReLU(BN1(Conv1(x))))) + shortcut(x)); the shortcut is the
/// identity when channel counts match, else a 1×1 projection.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub stages: [ConvBn; 2],
    pub projection: Option<Conv>,
}

impl ResidualBlock {
    pub fn new(prefix: &str, c_in: usize, c_out: usize) -> Self {
        ResidualBlock {
            stages: [conv_bn(prefix, 1, c_in, c_out, 3), conv_bn(prefix, 2, c_out, c_out, 3)],
            projection: (c_in != c_out).then(|| Conv::new(format!("{prefix}.proj"), c_in, c_out, 1)),
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.stages[0].forward_relu(ctx, x)?;
        let f = self.stages[1].forward(ctx, h)?;
        let shortcut = match &self.projection {
            Some(p) => p.forward(ctx, x)?,
            None => x,
        };
        let s = ctx.graph.add(f, shortcut)?;
        Ok(ctx.graph.relu(s))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseUnit {
    /// 1×1 Conv-BN-ReLU to 4·growth channels.
    pub bottleneck: ConvBn,
    /// 3×3 Conv-BN-ReLU to growth channels.
    pub conv: ConvBn,
}

/// Dense units over a growing concatenation, then a 1×1 transition down to
/// `out` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLevel {
    pub units: Vec<DenseUnit>,
    pub transition: ConvBn,
}

impl DenseLevel {
    pub fn new(prefix: &str, c_in: usize, c_out: usize, growth: usize, units: usize) -> Self {
        let mut c = c_in;
        let units = (1..=units)
            .map(|i| {
                let p = format!("{prefix}.unit{i}");
                let unit = DenseUnit {
                    bottleneck: ConvBn::new(
                        format!("{p}.bottleneck"),
                        format!("{p}.bottleneck_bn"),
                        c,
                        4 * growth,
                        1,
                    ),
                    conv: ConvBn::new(format!("{p}.conv"), format!("{p}.bn"), 4 * growth, growth, 3),
                };
                c += growth;
                unit
            })
            .collect();
        DenseLevel {
            units,
            transition: ConvBn::new(
                format!("{prefix}.transition"),
                format!("{prefix}.transition_bn"),
                c,
                c_out,
                1,
            ),
        }
    }

    /// Channels entering the transition: `in + units · growth`.
    pub fn concat_channels(&self) -> usize {
        self.transition.conv.in_channels
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let features = self.forward_features(ctx, x)?;
        self.transition.forward_relu(ctx, features)
    }

    /// The pre-transition concatenation of the input and every unit output.
    pub fn forward_features<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let mut features = x;
        for unit in &self.units {
            let b = unit.bottleneck.forward_relu(ctx, features)?;
            let y = unit.conv.forward_relu(ctx, b)?;
            features = ctx.graph.concat_channels(features, y)?;
        }
        Ok(features)
    }
}

/// Pre-activation Conv-BN outputs f_1..f_k with f_1 = BN(Conv(x)) and
/// f_i = BN(Conv(ReLU(f_{i-1}))).
fn chain_outputs<T: Scalar>(stages: &[ConvBn], ctx: &mut Ctx<'_, T>, x: Var) -> Result<Vec<Var>> {
    let mut outs: Vec<Var> = Vec::with_capacity(stages.len());
    for stage in stages {
        let input = match outs.last() {
            Some(&prev) => ctx.graph.relu(prev),
            None => x,
        };
        outs.push(stage.forward(ctx, input)?);
    }
    Ok(outs)
}

fn sum_all<T: Scalar>(ctx: &mut Ctx<'_, T>, terms: &[Var]) -> Result<Var> {
    let (&first, rest) = terms
        .split_first()
        .ok_or_else(|| Error::Internal("sum of no terms".into()))?;
    rest.iter().try_fold(first, |acc, &t| ctx.graph.add(acc, t))
}

/// DRU encoder: y = ReLU(f_1 + … + f_k), output concat(x, y).
#[derive(Clone, Debug, PartialEq)]
pub struct DruEncoderBlock {
    pub stages: Vec<ConvBn>,
}

impl DruEncoderBlock {
    pub fn new(prefix: &str, c_in: usize, c_out: usize, num_convs: usize) -> Self {
        let stages = (1..=num_convs)
            .map(|i| conv_bn(prefix, i, if i == 1 { c_in } else { c_out }, c_out, 3))
            .collect();
        DruEncoderBlock { stages }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        if self.stages.len() == 2 {
            self.forward_pair(ctx, x)
        } else {
            self.forward_general(ctx, x)
        }
    }

    /// Sums every Conv-BN output, for any number of stages.
    pub fn forward_general<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let outs = chain_outputs(&self.stages, ctx, x)?;
        let s = sum_all(ctx, &outs)?;
        let y = ctx.graph.relu(s);
        ctx.graph.concat_channels(x, y)
    }

    /// Dedicated two-stage path: ReLU(f_1 + f_2) concatenated after x.
    pub fn forward_pair<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let [first, second] = self.stages.as_slice() else {
            return Err(Error::config(format!(
                "two-stage DRU path used on a block with {} stages",
                self.stages.len()
            )));
        };
        let f1 = first.forward(ctx, x)?;
        let a1 = ctx.graph.relu(f1);
        let f2 = second.forward(ctx, a1)?;
        let s = ctx.graph.add(f1, f2)?;
        let y = ctx.graph.relu(s);
        ctx.graph.concat_channels(x, y)
    }
}

/// DRU decoder: ReLU(f_1 + … + f_k + P(x)) with P a 1×1 projection of the
/// input; no input concatenation.
#[derive(Clone, Debug, PartialEq)]
pub struct DruDecoderBlock {
    pub projection: Conv,
    pub stages: Vec<ConvBn>,
}

impl DruDecoderBlock {
    pub fn new(prefix: &str, c_in: usize, c_out: usize, num_convs: usize) -> Self {
        let stages = (1..=num_convs)
            .map(|i| conv_bn(prefix, i, if i == 1 { c_in } else { c_out }, c_out, 3))
            .collect();
        DruDecoderBlock {
            projection: Conv::new(format!("{prefix}.proj"), c_in, c_out, 1),
            stages,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        if self.stages.len() == 2 {
            self.forward_pair(ctx, x)
        } else {
            self.forward_general(ctx, x)
        }
    }

    pub fn forward_general<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let p = self.projection.forward(ctx, x)?;
        let mut terms = chain_outputs(&self.stages, ctx, x)?;
        terms.push(p);
        let s = sum_all(ctx, &terms)?;
        Ok(ctx.graph.relu(s))
    }

    pub fn forward_pair<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let [first, second] = self.stages.as_slice() else {
            return Err(Error::config(format!(
                "two-stage DRU path used on a block with {} stages",
                self.stages.len()
            )));
        };
        let p = self.projection.forward(ctx, x)?;
        let f1 = first.forward(ctx, x)?;
        let a1 = ctx.graph.relu(f1);
        let f2 = second.forward(ctx, a1)?;
        let s = ctx.graph.add(f1, f2)?;
        let s = ctx.graph.add(s, p)?;
        Ok(ctx.graph.relu(s))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    Plain(PlainBlock),
    Residual(ResidualBlock),
    Dense(DenseLevel),
    DruEncoder(DruEncoderBlock),
    DruDecoder(DruDecoderBlock),
}

impl Block {
    pub fn new(prefix: &str, spec: &BlockSpec, role: Role) -> Result<Block> {
        spec.validate()?;
        let (i, o) = (spec.in_channels, spec.out_channels);
        Ok(match (spec.kind, role) {
            (BlockKind::Plain, _) => Block::Plain(PlainBlock::new(prefix, i, o)),
            (BlockKind::Residual, _) => Block::Residual(ResidualBlock::new(prefix, i, o)),
            (BlockKind::Dense, _) => {
                Block::Dense(DenseLevel::new(prefix, i, o, spec.growth_rate, spec.num_dense_units))
            }
            (BlockKind::Dru, Role::Encoder) => Block::DruEncoder(DruEncoderBlock::new(prefix, i, o, spec.num_convs)),
            (BlockKind::Dru, Role::Decoder) => Block::DruDecoder(DruDecoderBlock::new(prefix, i, o, spec.num_convs)),
        })
    }

    pub fn in_channels(&self) -> usize {
        match self {
            Block::Plain(b) => b.stages[0].conv.in_channels,
            Block::Residual(b) => b.stages[0].conv.in_channels,
            Block::Dense(b) => b.units[0].bottleneck.conv.in_channels,
            Block::DruEncoder(b) => b.stages[0].conv.in_channels,
            Block::DruDecoder(b) => b.projection.in_channels,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            Block::Plain(b) => b.stages[1].conv.out_channels,
            Block::Residual(b) => b.stages[1].conv.out_channels,
            Block::Dense(b) => b.transition.conv.out_channels,
            Block::DruEncoder(b) => b.stages[0].conv.in_channels + b.stages[0].conv.out_channels,
            Block::DruDecoder(b) => b.projection.out_channels,
        }
    }

    fn conv_bns(&self) -> Vec<&ConvBn> {
        match self {
            Block::Plain(b) => b.stages.iter().collect(),
            Block::Residual(b) => b.stages.iter().collect(),
            Block::Dense(b) => b
                .units
                .iter()
                .flat_map(|u| [&u.bottleneck, &u.conv])
                .chain(std::iter::once(&b.transition))
                .collect(),
            Block::DruEncoder(b) => b.stages.iter().collect(),
            Block::DruDecoder(b) => b.stages.iter().collect(),
        }
    }

    fn extra_convs(&self) -> Vec<&Conv> {
        match self {
            Block::Residual(b) => b.projection.iter().collect(),
            Block::DruDecoder(b) => vec![&b.projection],
            _ => Vec::new(),
        }
    }

    /// The main-path convolution layers in order (bottlenecks and transitions
    /// included, projections excluded).
    pub fn convs(&self) -> Vec<&Conv> {
        self.conv_bns().into_iter().map(|cb| &cb.conv).collect()
    }

    pub fn param_count(&self) -> usize {
        self.conv_bns().iter().map(|cb| cb.param_count()).sum::<usize>()
            + self.extra_convs().iter().map(|c| c.param_count()).sum::<usize>()
    }

    pub fn init<T: Scalar>(&self, params: &mut Parameters<T>, init: &mut Initializer) -> Result<()> {
        for cb in self.conv_bns() {
            cb.init(params, init)?;
        }
        for c in self.extra_convs() {
            c.init(params, init)?;
        }
        Ok(())
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        match self {
            Block::Plain(b) => b.forward(ctx, x),
            Block::Residual(b) => b.forward(ctx, x),
            Block::Dense(b) => b.forward(ctx, x),
            Block::DruEncoder(b) => b.forward(ctx, x),
            Block::DruDecoder(b) => b.forward(ctx, x),
        }
    }
}
