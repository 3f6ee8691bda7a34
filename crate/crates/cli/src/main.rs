use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ganselect_cli::run::{self, CHECKPOINT_FILE};
use ganselect_cli::{CliError, ExperimentConfig, Result, SweepSpec};

#[derive(Parser)]
#[command(name = "ganselect", version, about = "Train, evaluate and probe small GANs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; writes checkpoint, history and metrics.
    Train(Common),
    /// Evaluate the generators stored in a checkpoint.
    Eval(WithCheckpoint),
    /// Flatness probe of a checkpoint's EMA generator.
    Probe(WithCheckpoint),
    /// Int8 round trip of a checkpoint's generators, with metric deltas.
    Quantize(WithCheckpoint),
    /// Train every cell of a sweep grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
    },
    /// Train and probe the latent-dim × depth grid on the 2D Gaussian.
    Figure1 {
        /// Base experiment; the grid overrides the generator shape.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "figure1")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment (or sweep) TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct WithCheckpoint {
    #[command(flatten)]
    common: Common,
    /// Defaults to `checkpoint.bin` in the output directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn experiment(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn checkpoint_path(args: &WithCheckpoint, out: &Path) -> PathBuf {
    args.checkpoint.clone().unwrap_or_else(|| out.join(CHECKPOINT_FILE))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let (cfg, out) = experiment(&common)?;
            run::run_train(&cfg, &out)?;
        }
        Command::Eval(args) => {
            let (cfg, out) = experiment(&args.common)?;
            run::run_eval(&cfg, &checkpoint_path(&args, &out), &out)?;
        }
        Command::Probe(args) => {
            let (cfg, out) = experiment(&args.common)?;
            run::run_probe(&cfg, &checkpoint_path(&args, &out), &out)?;
        }
        Command::Quantize(args) => {
            let (cfg, out) = experiment(&args.common)?;
            run::run_quantize(&cfg, &checkpoint_path(&args, &out), &out)?;
        }
        Command::Sweep { common, parallelism } => {
            let mut spec = SweepSpec::load(&common.config)?;
            if let Some(seed) = common.seed {
                spec.base.train.seed = seed;
            }
            let out = common.out.unwrap_or_else(|| spec.base.output_dir.clone());
            run::run_sweep(&spec, &out, parallelism)?;
        }
        Command::Figure1 { config, seed, out, parallelism } => {
            let base = match config {
                Some(path) => {
                    let mut cfg = ExperimentConfig::load(&path)?;
                    cfg.train.seed = seed;
                    cfg
                }
                None => run::figure1_base(seed),
            };
            run::run_figure1(&base, &out, parallelism)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GANSELECT_LOG", "info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            if !log::log_enabled!(log::Level::Error) {
                eprintln!("error: {e}");
            }
            ExitCode::from(exit_byte(&e))
        }
    }
}

fn exit_byte(e: &CliError) -> u8 {
    e.exit_code() as u8
}
