//! Encoder-decoder segmentation network assembled from one block family.
//!
//! Encoder level `l` runs a block at width `base · 2^l`; every level but the
//! last is followed by 2×2 max pooling. Each decoder level upsamples with a
//! 2×2 transpose convolution, concatenates the encoder output of the same
//! level, and runs a block. A 1×1 convolution maps to class logits.

use crate::blocks::{Block, BlockKind, BlockSpec, Role};
use crate::engine::{Graph, Var};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::layers::{Conv, Ctx, Mode, UpConv};
use crate::params::{Initializer, Parameters};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Single-channel (grayscale) input.
pub const INPUT_CHANNELS: usize = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub block: BlockKind,
    pub depth: usize,
    pub base_channels: usize,
    pub num_classes: usize,
    /// Dense growth rate at level 0, doubled per level like the widths.
    /// `None` means three quarters of `base_channels`.
    pub growth_rate: Option<usize>,
    pub num_dense_units: usize,
    pub num_convs: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            block: BlockKind::Dru,
            depth: 5,
            base_channels: 16,
            num_classes: 2,
            growth_rate: None,
            num_dense_units: 2,
            num_convs: 2,
            height: 192,
            width: 256,
        }
    }
}

impl NetworkConfig {
    pub const KEYS: [&'static str; 9] = [
        "block",
        "depth",
        "base_channels",
        "num_classes",
        "growth_rate",
        "num_dense_units",
        "num_convs",
        "height",
        "width",
    ];

    pub fn new(block: BlockKind) -> Self {
        NetworkConfig {
            block,
            ..Default::default()
        }
    }

    pub fn with_base(mut self, base: usize) -> Self {
        self.base_channels = base;
        self
    }

    pub fn with_size(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }

    pub fn with_classes(mut self, k: usize) -> Self {
        self.num_classes = k;
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn growth_rate(&self) -> usize {
        self.growth_rate.unwrap_or_else(|| (3 * self.base_channels / 4).max(1))
    }

    pub fn growth(&self, level: usize) -> usize {
        self.growth_rate() << level
    }

    /// Required divisor of height and width: one halving per pooling step.
    pub fn divisor(&self) -> usize {
        1 << (self.depth.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.depth) {
            return Err(Error::config(format!("depth must be in 1..=8, got {}", self.depth)));
        }
        if self.base_channels == 0 {
            return Err(Error::config("base_channels must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        let d = self.divisor();
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(d) || !self.width.is_multiple_of(d) {
            return Err(Error::config(format!(
                "input size {}x{} must be positive and divisible by {d} (2^(depth-1) for depth {})",
                self.height, self.width, self.depth
            )));
        }
        if self.block == BlockKind::Dru && self.num_convs < 2 {
            return Err(Error::config(format!("num_convs must be >= 2, got {}", self.num_convs)));
        }
        if self.block == BlockKind::Dense && self.num_dense_units < 2 {
            return Err(Error::config(format!(
                "num_dense_units must be >= 2, got {}",
                self.num_dense_units
            )));
        }
        Ok(())
    }

    /// Sets one field from a config entry. Returns false for keys that are
    /// not network keys.
    pub fn apply(&mut self, entry: &crate::kv::Entry) -> Result<bool> {
        match entry.key.as_str() {
            "block" => self.block = entry.value.parse().map_err(|e| prefix_line(entry.line, e))?,
            "depth" => self.depth = entry.parse()?,
            "base_channels" => self.base_channels = entry.parse()?,
            "num_classes" => self.num_classes = entry.parse()?,
            "growth_rate" => self.growth_rate = Some(entry.parse()?),
            "num_dense_units" => self.num_dense_units = entry.parse()?,
            "num_convs" => self.num_convs = entry.parse()?,
            "height" => self.height = entry.parse()?,
            "width" => self.width = entry.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Reads the network keys of a config file, ignoring all others.
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut cfg = NetworkConfig::default();
        if let Some(size) = kv.get("size") {
            let s: usize = size.parse()?;
            cfg.height = s;
            cfg.width = s;
        }
        for e in kv.entries() {
            cfg.apply(e)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical `key=value` lines with every value resolved.
    pub fn to_kv_lines(&self) -> Vec<(String, String)> {
        vec![
            ("block".into(), self.block.to_string()),
            ("depth".into(), self.depth.to_string()),
            ("base_channels".into(), self.base_channels.to_string()),
            ("num_classes".into(), self.num_classes.to_string()),
            ("growth_rate".into(), self.growth_rate().to_string()),
            ("num_dense_units".into(), self.num_dense_units.to_string()),
            ("num_convs".into(), self.num_convs.to_string()),
            ("height".into(), self.height.to_string()),
            ("width".into(), self.width.to_string()),
        ]
    }
}

fn prefix_line(line: usize, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("line {line}: {m}")),
        other => other,
    }
}

/// Static description of one network stage for reporting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModuleInfo {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    /// Per stage (enc*, up*, dec*, head) in execution order.
    pub modules: Vec<ModuleInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    cfg: NetworkConfig,
    encoders: Vec<Block>,
    ups: Vec<UpConv>,
    decoders: Vec<Block>,
    head: Conv,
}

/// Builds the network and its seeded initial parameters.
pub fn build_network<T: Scalar>(cfg: &NetworkConfig, seed: u64) -> Result<(Network, Parameters<T>)> {
    let net = Network::new(cfg.clone())?;
    let params = net.init_parameters(seed)?;
    Ok((net, params))
}

impl Network {
    pub fn new(cfg: NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let spec_for = |c_in: usize, level: usize| {
            BlockSpec::new(cfg.block, c_in, cfg.channels(level))
                .with_num_convs(cfg.num_convs)
                .with_growth(cfg.growth(level), cfg.num_dense_units)
        };

        let mut encoders = Vec::with_capacity(cfg.depth);
        let mut skip_channels = Vec::with_capacity(cfg.depth);
        let mut c = INPUT_CHANNELS;
        for level in 0..cfg.depth {
            let block = Block::new(&format!("enc{level}"), &spec_for(c, level), Role::Encoder)?;
            c = block.out_channels();
            skip_channels.push(c);
            encoders.push(block);
        }

        let mut ups = Vec::new();
        let mut decoders = Vec::new();
        for level in (0..cfg.depth.saturating_sub(1)).rev() {
            let width = cfg.channels(level);
            ups.push(UpConv::new(format!("up{level}"), c, width));
            let spec = spec_for(width + skip_channels[level], level);
            let block = Block::new(&format!("dec{level}"), &spec, Role::Decoder)?;
            c = block.out_channels();
            decoders.push(block);
        }
        let head = Conv::new("head", c, cfg.num_classes, 1);
        Ok(Network {
            cfg,
            encoders,
            ups,
            decoders,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn encoders(&self) -> &[Block] {
        &self.encoders
    }

    pub fn decoders(&self) -> &[Block] {
        &self.decoders
    }

    pub fn init_parameters<T: Scalar>(&self, seed: u64) -> Result<Parameters<T>> {
        let mut params = Parameters::new();
        let mut init = Initializer::new(seed);
        for block in &self.encoders {
            block.init(&mut params, &mut init)?;
        }
        for (up, block) in self.ups.iter().zip(&self.decoders) {
            up.init(&mut params, &mut init)?;
            block.init(&mut params, &mut init)?;
        }
        self.head.init(&mut params, &mut init)?;
        Ok(params)
    }

    pub fn check_input(&self, shape: Shape) -> Result<()> {
        let [_, c, h, w] = shape.dims();
        if c != INPUT_CHANNELS || h != self.cfg.height || w != self.cfg.width {
            return Err(Error::config(format!(
                "network expects input (N, {INPUT_CHANNELS}, {}, {}), got {shape}",
                self.cfg.height, self.cfg.width
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `ctx.graph` and returns the logits node.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        self.check_input(ctx.graph.shape(x))?;
        let last = self.encoders.len() - 1;
        let mut skips = Vec::with_capacity(last);
        let mut h = x;
        for (level, block) in self.encoders.iter().enumerate() {
            h = block.forward(ctx, h)?;
            if level < last {
                skips.push(h);
                h = ctx.graph.max_pool_2x2(h)?;
            }
        }
        for ((up, block), skip) in self.ups.iter().zip(&self.decoders).zip(skips.iter().rev()) {
            let u = up.forward(ctx, h)?;
            let c = ctx.graph.concat_channels(u, *skip)?;
            h = block.forward(ctx, c)?;
        }
        self.head.forward(ctx, h)
    }

    /// Inference-mode logits for a batch. Parameters are not modified.
    pub fn logits<T: Scalar>(&self, params: &Parameters<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut scratch = params.clone();
        let mut graph = Graph::new();
        let xv = graph.leaf(x.clone());
        let mut ctx = Ctx::new(&mut graph, &mut scratch, Mode::Inference);
        let out = self.forward(&mut ctx, xv)?;
        Ok(graph.value(out).clone())
    }

    /// Learnable parameter counts derived from the layer structure.
    pub fn count_params(&self) -> ParamCount {
        let mut modules = Vec::new();
        let (h, w) = (self.cfg.height, self.cfg.width);
        for (level, block) in self.encoders.iter().enumerate() {
            modules.push(ModuleInfo {
                name: format!("enc{level}"),
                in_channels: block.in_channels(),
                out_channels: block.out_channels(),
                height: h >> level,
                width: w >> level,
                params: block.param_count(),
            });
        }
        for (up, block) in self.ups.iter().zip(&self.decoders) {
            let level: usize = up.name[2..].parse().expect("up-conv names are up<level>");
            modules.push(ModuleInfo {
                name: up.name.clone(),
                in_channels: up.in_channels,
                out_channels: up.out_channels,
                height: h >> level,
                width: w >> level,
                params: up.param_count(),
            });
            modules.push(ModuleInfo {
                name: format!("dec{level}"),
                in_channels: block.in_channels(),
                out_channels: block.out_channels(),
                height: h >> level,
                width: w >> level,
                params: block.param_count(),
            });
        }
        modules.push(ModuleInfo {
            name: "head".into(),
            in_channels: self.head.in_channels,
            out_channels: self.head.out_channels,
            height: h,
            width: w,
            params: self.head.param_count(),
        });
        ParamCount {
            total: modules.iter().map(|m| m.params).sum(),
            modules,
        }
    }
}

/// Learnable element counts grouped by layer (parameter name without its
/// final component), in name order.
pub fn layer_counts<T: Scalar>(params: &Parameters<T>) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = Vec::new();
    for (name, t) in params.learnable() {
        let layer = name.rsplit_once('.').map_or(name.as_str(), |(l, _)| l);
        match out.last_mut() {
            Some((l, n)) if l == layer => *n += t.numel(),
            _ => out.push((layer.to_string(), t.numel())),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_indivisible_input() {
        let cfg = NetworkConfig::default().with_size(100, 100);
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("divisible by 16"), "{err}");
    }

    #[test]
    fn lesion_input_size_is_accepted() {
        let cfg = NetworkConfig::default().with_size(192, 256);
        cfg.validate().unwrap();
        let net = Network::new(cfg).unwrap();
        let bottom = &net.count_params().modules[4];
        assert_eq!((bottom.name.as_str(), bottom.height, bottom.width), ("enc4", 12, 16));
    }

    #[test]
    fn structural_and_stored_counts_agree() {
        for kind in BlockKind::ALL {
            let cfg = NetworkConfig::new(kind).with_base(4).with_size(32, 32);
            let (net, params) = build_network::<f32>(&cfg, 0).unwrap();
            assert_eq!(net.count_params().total, params.learnable_count(), "{kind}");
        }
    }

    #[test]
    fn dru_encoder_channels_accumulate() {
        let net = Network::new(NetworkConfig::default().with_base(8)).unwrap();
        let outs: Vec<usize> = net.encoders().iter().map(Block::out_channels).collect();
        assert_eq!(outs, [9, 25, 57, 121, 249]);
    }

    #[test]
    fn config_round_trips_through_kv() {
        let mut cfg = NetworkConfig::new(BlockKind::Dense).with_base(8).with_size(64, 32);
        cfg.num_classes = 3;
        let text: String = cfg.to_kv_lines().iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        let back = NetworkConfig::from_kv(&KvFile::parse(&text).unwrap()).unwrap();
        assert_eq!(back.growth_rate(), cfg.growth_rate());
        assert_eq!(back.to_kv_lines(), cfg.to_kv_lines());
    }
}
