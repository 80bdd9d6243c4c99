use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clfkit::trainer::LossMode;
use clfkit_cli::commands::{cmd_pretrain, cmd_roa, cmd_simulate, cmd_train, cmd_verify};
use clfkit_cli::sweep::cmd_sweep;
use clfkit_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "clfkit", version, about = "Train, verify and evaluate neural control Lyapunov functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a control-affine dynamics model to samples of the configured system.
    Pretrain(Common),
    /// Train a CLF until the dense verifier is clean.
    Train(Common),
    /// Dense-grid audit of a checkpoint.
    Verify(WithCheckpoint),
    /// Largest certified sublevel set of a checkpoint.
    Roa(WithCheckpoint),
    /// Closed-loop rollouts under a checkpoint's controller.
    Simulate(WithCheckpoint),
    /// Run the experiment matrix from the `[experiment]` table.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    loss_mode: Option<Mode>,
    #[arg(long, value_enum)]
    shaping: Option<Switch>,
}

#[derive(Args)]
struct WithCheckpoint {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Ours,
    Legacy,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        let mode = self.loss_mode.map(|m| match m {
            Mode::Ours => LossMode::Ours,
            Mode::Legacy => LossMode::Legacy,
        });
        cfg.apply_overrides(self.seed, mode, self.shaping.map(|s| matches!(s, Switch::On)))?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Pretrain(c) => cmd_pretrain(&c.load()?, &c.out).map(drop),
        Command::Train(c) => cmd_train(&c.load()?, &c.out).map(drop),
        Command::Verify(w) => cmd_verify(&w.common.load()?, &w.checkpoint, &w.common.out).map(drop),
        Command::Roa(w) => cmd_roa(&w.common.load()?, &w.checkpoint, &w.common.out).map(drop),
        Command::Simulate(w) => cmd_simulate(&w.common.load()?, &w.checkpoint, &w.common.out).map(drop),
        Command::Sweep { common, jobs } => cmd_sweep(&common.load()?, &common.out, jobs).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
