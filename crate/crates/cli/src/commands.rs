//! The subcommands. Each returns the text it prints; files are written with
//! whole-file atomic renames, and only after every check has passed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use drunet_core::atomic::write_atomic;
use drunet_core::data::{
    class_intensity, load_dataset_dir, load_image_dir, save_gray_png, split_dataset, synth_generate, write_dataset,
    Sample, Split, SynthSpec,
};
use drunet_core::diagnostics::all_gradchecks;
use drunet_core::engine::gradcheck::DEFAULT_TOLERANCE;
use drunet_core::metrics::argmax_labels;
use drunet_core::network::layer_counts;
use drunet_core::training::{
    evaluate, load_checkpoint, save_checkpoint, train, EpochRecord, LoadedCheckpoint, OptimizerState,
};
use drunet_core::{build_network, BlockKind, Error, Network, NetworkConfig, Result, Tensor};

use crate::config::{DataSource, RunConfig};
use crate::report::{compare, parse_rows, render, rows_from_metrics};

/// Which part of the seeded split a command reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Partition {
    All,
    Train,
    Test,
    Validation,
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LOSS_LOG: &str = "loss.tsv";
pub const CONFIG_ECHO: &str = "config.txt";

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.ckpt")
}

pub fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn synth_spec(cfg: &RunConfig, n: usize) -> SynthSpec {
    SynthSpec {
        n,
        height: cfg.network.height,
        width: cfg.network.width,
        classes: cfg.network.num_classes,
        seed: cfg.plan.seed,
    }
}

pub fn load_samples(cfg: &RunConfig) -> Result<Vec<Sample>> {
    let net = &cfg.network;
    match &cfg.data {
        DataSource::Synthetic { n } => synth_generate(&synth_spec(cfg, *n)),
        DataSource::Directory(dir) => load_dataset_dir(dir, net.height, net.width, net.num_classes, &cfg.thresholds()),
    }
}

fn select<T: Clone>(cfg: &RunConfig, items: Vec<T>, part: Partition) -> Result<Vec<T>> {
    if part == Partition::All {
        return Ok(items);
    }
    let Split {
        train,
        test,
        validation,
    } = split_dataset(items.len(), &cfg.split)?;
    let idx = match part {
        Partition::Train => train,
        Partition::Test => test,
        Partition::Validation => validation,
        Partition::All => unreachable!(),
    };
    if idx.is_empty() {
        return Err(Error::Data(format!("the {part:?} partition is empty").to_lowercase()));
    }
    Ok(Split::select(&items, &idx))
}

fn timestamp() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    format!("unix_time={secs}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub epochs: Vec<EpochRecord>,
}

/// Trains on the train partition, writing the configuration echo, the
/// per-epoch loss log, scheduled checkpoints and the final checkpoint.
pub fn cmd_train(cfg: &RunConfig, out_dir: &Path) -> Result<TrainOutcome> {
    let samples = select(cfg, load_samples(cfg)?, Partition::Train)?;
    let (net, mut params) = build_network::<f32>(&cfg.network, cfg.plan.seed)?;
    let mut opt = OptimizerState::new(cfg.adam, &params);
    let echo = cfg.echo();
    let mut log = String::from("epoch\tmean_loss\tsteps\n");
    // Nothing is written until the trainer's preflight checks have passed.
    let record = train(&net, &mut params, &mut opt, &samples, &cfg.plan, |r, p, o| {
        if r.epoch == 1 {
            write_atomic(&out_dir.join(CONFIG_ECHO), echo.as_bytes())?;
        }
        let _ = writeln!(log, "{}\t{}\t{}", r.epoch, r.mean_loss, r.steps);
        write_atomic(&out_dir.join(LOSS_LOG), log.as_bytes())?;
        if cfg.plan.checkpoint_due(r.epoch) {
            save_checkpoint(&out_dir.join(checkpoint_name(r.epoch)), &echo, p, o)?;
        }
        eprintln!("epoch {}/{}: mean loss {:.6}", r.epoch, cfg.plan.epochs, r.mean_loss);
        Ok(())
    })?;
    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT);
    save_checkpoint(&final_checkpoint, &echo, &params, &opt)?;
    Ok(TrainOutcome {
        final_checkpoint,
        epochs: record.epochs,
    })
}

/// The checkpoint plus the run configuration that supplies the data: the
/// given config file, else the one echoed into the checkpoint. `data`
/// replaces the data source with a directory.
fn open_checkpoint(
    checkpoint: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    data: Option<&Path>,
) -> Result<(LoadedCheckpoint, RunConfig)> {
    let loaded = load_checkpoint(checkpoint)?;
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::parse(&loaded.config_text)?,
    };
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    if let Some(dir) = data {
        cfg.data = DataSource::Directory(dir.to_path_buf());
    }
    let (ck, run) = (loaded.network.config(), &cfg.network);
    if ck.num_classes != run.num_classes {
        return Err(Error::Incompatible(format!(
            "checkpoint predicts {} classes but the dataset is configured for {}",
            ck.num_classes, run.num_classes
        )));
    }
    if (ck.height, ck.width) != (run.height, run.width) {
        return Err(Error::Incompatible(format!(
            "checkpoint expects {}x{} inputs but the dataset is configured for {}x{}",
            ck.height, ck.width, run.height, run.width
        )));
    }
    Ok((loaded, cfg))
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub config: Option<&'a Path>,
    pub seed: Option<u64>,
    pub data: Option<&'a Path>,
    pub split: Partition,
    pub out: &'a Path,
    pub compare: Option<&'a Path>,
}

/// Writes the metrics report and returns its text.
pub fn cmd_eval(args: &EvalArgs<'_>) -> Result<String> {
    let (loaded, cfg) = open_checkpoint(args.checkpoint, args.config, args.seed, args.data)?;
    let samples = select(&cfg, load_samples(&cfg)?, args.split)?;
    let per_image = evaluate(&loaded.network, &loaded.params, &samples)?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let rows = rows_from_metrics(&ids, &per_image);
    let tests = match args.compare {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Data(format!("cannot read report {}: {e}", path.display())))?;
            Some(compare(&rows, &parse_rows(&text)?)?)
        }
        None => None,
    };
    let other = args.compare.map(|p| p.display().to_string());
    let comparison = other.as_deref().zip(tests.as_deref());
    let text = render(&timestamp(), &loaded.config_text, &rows, &per_image, comparison);
    write_atomic(args.out, text.as_bytes())?;
    Ok(text)
}

/// Writes `<id>.png` per input image with class `c` drawn at
/// [`class_intensity`]. Returns the written paths.
pub fn cmd_predict(
    checkpoint: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    data: Option<&Path>,
    split: Partition,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let (loaded, cfg) = open_checkpoint(checkpoint, config, seed, data)?;
    let (h, w) = (cfg.network.height, cfg.network.width);
    let images: Vec<(String, Tensor<f32>)> = match &cfg.data {
        DataSource::Synthetic { n } => synth_generate(&synth_spec(&cfg, *n))?
            .into_iter()
            .map(|s| (s.id, s.image))
            .collect(),
        DataSource::Directory(dir) => load_image_dir(dir, h, w)?,
    };
    let images = select(&cfg, images, split)?;
    let k = cfg.network.num_classes;
    let mut masks = Vec::with_capacity(images.len());
    for (id, image) in &images {
        let labels = argmax_labels(&loaded.network.logits(&loaded.params, image)?);
        let pixels: Vec<u8> = labels.labels().iter().map(|&c| class_intensity(c, k)).collect();
        masks.push((out_dir.join(format!("{id}.png")), pixels));
    }
    for (path, pixels) in &masks {
        save_gray_png(path, w, h, pixels.clone())?;
    }
    Ok(masks.into_iter().map(|(p, _)| p).collect())
}

/// Materialises the configured synthetic dataset as `images/` and `masks/`.
pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<usize> {
    let n = match cfg.data {
        DataSource::Synthetic { n } => n,
        DataSource::Directory(_) => return Err(Error::Config("synth needs synthetic=true".into())),
    };
    let samples = synth_generate(&synth_spec(cfg, n))?;
    write_dataset(&samples, out_dir, cfg.network.num_classes)?;
    Ok(samples.len())
}

fn describe(net: &Network) -> String {
    let cfg = net.config();
    let count = net.count_params();
    let mut out = format!(
        "block={} depth={} base_channels={} num_classes={} input=1x{}x{}\n",
        cfg.block, cfg.depth, cfg.base_channels, cfg.num_classes, cfg.height, cfg.width
    );
    out.push_str("module\tin_channels\tout_channels\theight\twidth\tparams\n");
    for m in &count.modules {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            m.name, m.in_channels, m.out_channels, m.height, m.width, m.params
        );
    }
    let _ = writeln!(out, "total\t\t\t\t\t{}", count.total);
    out
}

/// Per-level shapes and counts, and optionally the four-family comparison
/// and the gradient checks. Failing gradient checks are an internal error
/// after the table has been printed.
pub fn cmd_inspect(cfg: &NetworkConfig, all_blocks: bool, gradcheck: bool) -> Result<String> {
    let (net, params) = build_network::<f32>(cfg, 0)?;
    let mut out = format!("# drunet-lab v1 inspect\n{}", describe(&net));
    out.push_str("## layers\nlayer\tparams\n");
    for (layer, n) in layer_counts(&params) {
        let _ = writeln!(out, "{layer}\t{n}");
    }
    if all_blocks {
        out.push_str("## block families\nblock\tparams\n");
        let mut counts = Vec::new();
        for kind in [BlockKind::Plain, BlockKind::Residual, BlockKind::Dru, BlockKind::Dense] {
            let c = Network::new(NetworkConfig {
                block: kind,
                ..cfg.clone()
            })?
            .count_params()
            .total;
            let _ = writeln!(out, "{kind}\t{c}");
            counts.push(c);
        }
        let ordered = counts[1] < counts[2] && counts[2] < counts[3];
        let _ = writeln!(out, "residual < dru < dense\t{}", if ordered { "yes" } else { "no" });
    }
    if gradcheck {
        out.push_str("## gradcheck\ncase\tshape\tmax_rel_error\tstatus\n");
        let cases = all_gradchecks(0)?;
        let mut failed = 0;
        for c in &cases {
            let ok = c.report.passes(DEFAULT_TOLERANCE);
            failed += usize::from(!ok);
            let status = if ok { "ok" } else { "FAIL" };
            let _ = writeln!(out, "{}\t{}\t{:.3e}\t{status}", c.name, c.shape, c.report.max_rel_error);
        }
        if failed > 0 {
            print!("{out}");
            return Err(Error::Internal(format!(
                "{failed} of {} gradient checks exceed {DEFAULT_TOLERANCE:e}",
                cases.len()
            )));
        }
    }
    Ok(out)
}

/// Process exit status for an error: 2 configuration, 3 data, 4
/// incompatibility, 5 internal.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Format(_) | Error::Ingest { .. } | Error::Io { .. } => 3,
        Error::Incompatible(_) => 4,
        Error::Internal(_) => 5,
    }
}
