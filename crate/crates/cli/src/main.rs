use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use drunet_core::Result;
use drunet_lab::commands::{
    cmd_eval, cmd_inspect, cmd_predict, cmd_synth, cmd_train, exit_code, load_config, EvalArgs, Partition,
};

#[derive(Parser)]
#[command(
    name = "drunet-lab",
    version,
    about = "Train, evaluate and inspect encoder-decoder segmentation networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured dataset and write checkpoints and a loss log.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a per-image, per-class metrics report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset configuration; defaults to the one stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset directory with images/ and masks/.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        split: Partition,
        /// Report path.
        #[arg(long)]
        out: PathBuf,
        /// Earlier report to compare against with paired signed-rank tests.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Write predicted masks as 8-bit PNGs.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Image directory (its images/ subdirectory if present).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        split: Partition,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print per-level shapes and parameter counts.
    Inspect {
        #[arg(long)]
        config: PathBuf,
        /// Compare parameter counts of all four block families.
        #[arg(long)]
        all_blocks: bool,
        /// Run finite-difference checks on every primitive and block.
        #[arg(long)]
        gradcheck: bool,
    },
    /// Write the configured synthetic dataset to disk.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let out = out.unwrap_or_else(|| cfg.out_dir.clone());
            let outcome = cmd_train(&cfg, &out)?;
            if let Some(last) = outcome.epochs.last() {
                println!("final mean loss {}", last.mean_loss);
            }
            println!("wrote {}", outcome.final_checkpoint.display());
        }
        Command::Eval {
            checkpoint,
            config,
            seed,
            data,
            split,
            out,
            compare,
        } => {
            let text = cmd_eval(&EvalArgs {
                checkpoint: &checkpoint,
                config: config.as_deref(),
                seed,
                data: data.as_deref(),
                split,
                out: &out,
                compare: compare.as_deref(),
            })?;
            if let Some(summary) = text.find("## summary") {
                print!("{}", &text[summary..]);
            }
            println!("wrote {}", out.display());
        }
        Command::Predict {
            checkpoint,
            config,
            seed,
            data,
            split,
            out,
        } => {
            let written = cmd_predict(&checkpoint, config.as_deref(), seed, data.as_deref(), split, &out)?;
            println!("wrote {} masks to {}", written.len(), out.display());
        }
        Command::Inspect {
            config,
            all_blocks,
            gradcheck,
        } => {
            let cfg = load_config(&config, None)?;
            print!("{}", cmd_inspect(&cfg.network, all_blocks, gradcheck)?);
        }
        Command::Synth { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let n = cmd_synth(&cfg, &out)?;
            println!("wrote {n} samples to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("drunet-lab: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
