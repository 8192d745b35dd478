//! Run configuration: one flat `key = value` file holding network, training,
//! optimizer, dataset and output settings.

use std::path::{Path, PathBuf};

use drunet_core::data::{default_thresholds, SplitMode, SplitSpec};
use drunet_core::kv::{Entry, KvFile};
use drunet_core::shuffle::RNG_NAME;
use drunet_core::training::{AdamConfig, TrainPlan};
use drunet_core::{Error, NetworkConfig, Result};

/// Keys owned by this file rather than by a core config type.
const RUN_KEYS: [&str; 11] = [
    "size",
    "synthetic",
    "n",
    "data_dir",
    "mask_thresholds",
    "train_fraction",
    "train_count",
    "test_count",
    "validation_count",
    "out_dir",
    "rng",
];

pub fn known_keys() -> Vec<&'static str> {
    NetworkConfig::KEYS
        .iter()
        .chain(&TrainPlan::KEYS)
        .chain(&AdamConfig::KEYS)
        .chain(&RUN_KEYS)
        .copied()
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Generated in memory from the run seed.
    Synthetic {
        n: usize,
    },
    Directory(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub plan: TrainPlan,
    pub adam: AdamConfig,
    pub data: DataSource,
    /// `None` means the evenly spaced defaults for `num_classes`.
    pub mask_thresholds: Option<Vec<f64>>,
    pub split: SplitSpec,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            network: NetworkConfig::default(),
            plan: TrainPlan::default(),
            adam: AdamConfig::default(),
            data: DataSource::Synthetic { n: 8 },
            mask_thresholds: None,
            split: SplitSpec::fraction(1.0, 0),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = KvFile::parse(text)?;
        kv.check_known(&known_keys())?;
        let mut cfg = RunConfig::default();
        // `size` first so explicit height/width win regardless of order.
        if let Some(e) = kv.get("size") {
            let s: usize = e.parse()?;
            cfg.network.height = s;
            cfg.network.width = s;
        }
        let mut synthetic = kv.get("synthetic").map(Entry::parse_bool).transpose()?;
        let mut n = 8;
        let mut data_dir = None;
        let (mut fraction, mut train_count, mut test_count) = (None, None, None);
        for e in kv.entries() {
            if cfg.network.apply(e)? || cfg.plan.apply(e)? || cfg.adam.apply(e)? {
                continue;
            }
            match e.key.as_str() {
                "size" | "synthetic" => {}
                "n" => n = e.parse()?,
                "data_dir" => data_dir = Some(PathBuf::from(&e.value)),
                "mask_thresholds" => cfg.mask_thresholds = Some(e.parse_list()?),
                "train_fraction" => fraction = Some((e.parse::<f64>()?, e.line)),
                "train_count" => train_count = Some(e.parse()?),
                "test_count" => test_count = Some(e.parse()?),
                "validation_count" => cfg.split.validation = e.parse()?,
                "out_dir" => cfg.out_dir = PathBuf::from(&e.value),
                "rng" if e.value == RNG_NAME => {}
                "rng" => {
                    return Err(Error::Config(format!(
                        "line {}: unsupported rng {:?}, only {RNG_NAME} is available",
                        e.line, e.value
                    )))
                }
                other => unreachable!("key {other} passed the known-key check"),
            }
        }
        cfg.split.mode = match (fraction, train_count, test_count) {
            (None, None, None) => SplitMode::Fraction(1.0),
            (Some((f, _)), None, None) => SplitMode::Fraction(f),
            (None, Some(train), Some(test)) => SplitMode::Counts { train, test },
            (Some((_, line)), _, _) => {
                return Err(Error::Config(format!(
                    "line {line}: train_fraction cannot be combined with train_count/test_count"
                )))
            }
            _ => {
                return Err(Error::Config(
                    "train_count and test_count must be given together".into(),
                ))
            }
        };
        if synthetic.is_none() && data_dir.is_none() {
            synthetic = Some(true);
        }
        cfg.data = match (synthetic, data_dir) {
            (Some(true), None) => DataSource::Synthetic { n },
            (Some(true), Some(_)) => {
                return Err(Error::Config(
                    "synthetic=true and data_dir are mutually exclusive".into(),
                ))
            }
            (_, Some(dir)) => DataSource::Directory(dir),
            (Some(false), None) => return Err(Error::Config("synthetic=false requires data_dir".into())),
            (None, None) => unreachable!(),
        };
        cfg.set_seed(cfg.plan.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    /// One seed drives initialization, shuffling, splitting and synthetic data.
    pub fn set_seed(&mut self, seed: u64) {
        self.plan.seed = seed;
        self.split.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.plan.validate()?;
        self.adam.validate()?;
        if let Some(t) = &self.mask_thresholds {
            if t.len() + 1 != self.network.num_classes {
                return Err(Error::Config(format!(
                    "{} classes need {} mask_thresholds, got {}",
                    self.network.num_classes,
                    self.network.num_classes - 1,
                    t.len()
                )));
            }
        }
        Ok(())
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.mask_thresholds
            .clone()
            .unwrap_or_else(|| default_thresholds(self.network.num_classes))
    }

    /// Canonical text of every resolved setting except `out_dir`, so runs
    /// that differ only in where they write produce identical checkpoints.
    /// Parsing the echo yields the same configuration.
    pub fn echo(&self) -> String {
        let mut lines = self.network.to_kv_lines();
        lines.extend(self.plan.to_kv_lines());
        lines.extend(self.adam.to_kv_lines());
        match &self.data {
            DataSource::Synthetic { n } => {
                lines.push(("synthetic".into(), "true".into()));
                lines.push(("n".into(), n.to_string()));
            }
            DataSource::Directory(dir) => {
                lines.push(("synthetic".into(), "false".into()));
                lines.push(("data_dir".into(), dir.display().to_string()));
            }
        }
        let thr: Vec<String> = self.thresholds().iter().map(f64::to_string).collect();
        lines.push(("mask_thresholds".into(), thr.join(",")));
        match self.split.mode {
            SplitMode::Fraction(f) => lines.push(("train_fraction".into(), f.to_string())),
            SplitMode::Counts { train, test } => {
                lines.push(("train_count".into(), train.to_string()));
                lines.push(("test_count".into(), test.to_string()));
            }
        }
        lines.push(("validation_count".into(), self.split.validation.to_string()));
        lines.push(("rng".into(), RNG_NAME.into()));
        lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_names_key_and_line() {
        let err = RunConfig::parse("block=dru\nblok=dru\n").unwrap_err().to_string();
        assert!(err.contains("blok") && err.contains("line 2"), "{err}");
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::parse(
            "block=dense\nsize=64\nnum_classes=3\nepochs=3\nlr=0.0005\nseed=9\nn=4\ntrain_count=3\ntest_count=1\n",
        )
        .unwrap();
        let again = RunConfig::parse(&cfg.echo()).unwrap();
        assert_eq!(again.echo(), cfg.echo());
        assert_eq!((again.plan, again.adam, again.split), (cfg.plan, cfg.adam, cfg.split));
        assert_eq!(again.data, cfg.data);
        assert!(cfg.echo().contains("rng=chacha8\n"));
        assert!(!cfg.echo().contains("out_dir"));
    }

    #[test]
    fn training_recipe_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!((cfg.plan.epochs, cfg.plan.batch_size), (50, 4));
        assert_eq!(cfg.adam.lr, 0.001);
        assert_eq!(cfg.network.depth, 5);
        assert_eq!(cfg.data, DataSource::Synthetic { n: 8 });
    }

    #[test]
    fn size_is_overridden_by_explicit_dims() {
        let cfg = RunConfig::parse("width=128\nsize=64").unwrap();
        assert_eq!((cfg.network.height, cfg.network.width), (64, 128));
    }

    #[test]
    fn rejects_conflicts() {
        for text in [
            "train_fraction=0.5\ntrain_count=2\ntest_count=2",
            "train_count=2",
            "synthetic=true\ndata_dir=x",
            "synthetic=false",
            "rng=pcg",
            "num_classes=3\nmask_thresholds=100",
            "lr=-1",
            "epochs=0",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }
}
