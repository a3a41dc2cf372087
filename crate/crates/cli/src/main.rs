use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use revelight_cli::commands::{self, Common, CommArgs, SpeedupArgs, VerifyArgs};
use revelight_cli::dataset::DataFormat;
use revelight_cli::CliError;

#[derive(Parser)]
#[command(name = "revelight", version, about = "Black-box vertical federated learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Flat `key = value` experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset format: libsvm, csv or idx.
    #[arg(long, value_parser = parse_format)]
    format: Option<DataFormat>,
}

fn parse_format(s: &str) -> Result<DataFormat, String> {
    s.parse()
}

impl CommonArgs {
    fn common(&self) -> Common {
        Common { config: self.config.clone(), seed: self.seed, out: self.out.clone(), format: self.format }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics, transcript and summary.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Check the smoothing bounds and estimator unbiasedness.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Random quadratics per (dimension, radius) cell.
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Monte-Carlo draws per bound estimate.
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
        /// Monte-Carlo draws per unbiasedness estimate.
        #[arg(long, default_value_t = 100_000)]
        unbiased_draws: usize,
        /// Quadratics per dimension in the unbiasedness check.
        #[arg(long, default_value_t = 50)]
        instances: usize,
        /// Also fit the convergence rate of the configured run.
        #[arg(long)]
        rate: bool,
    },
    /// Compare TIG and AsyREVEL traffic across block sizes.
    BenchComm {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [16usize, 64, 256, 1024])]
        blocks: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        events: u64,
        #[arg(long, default_value_t = 2)]
        parties: usize,
    },
    /// Time to target loss for several party counts.
    Speedup {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8])]
        qs: Vec<usize>,
        /// Target training loss (defaults to the config's stop_loss).
        #[arg(long)]
        target: Option<f64>,
        /// Time `horizon` ideal-schedule events instead of a target loss.
        #[arg(long)]
        ideal: bool,
    },
    /// Check a transcript for parameter-shaped payloads.
    Audit {
        #[command(flatten)]
        common: CommonArgs,
        /// JSON-Lines transcript written by `train`.
        #[arg(long)]
        transcript: PathBuf,
    },
}

fn dispatch(cmd: Command) -> Result<String, CliError> {
    match cmd {
        Command::Train { common } => commands::train(&common.common()),
        Command::Verify { common, trials, draws, unbiased_draws, instances, rate } => {
            commands::verify(&common.common(), &VerifyArgs { trials, draws, unbiased_draws, instances, rate })
        }
        Command::BenchComm { common, blocks, events, parties } => {
            commands::bench_comm(&common.common(), &CommArgs { blocks, events, parties })
        }
        Command::Speedup { common, qs, target, ideal } => {
            commands::speedup(&common.common(), &SpeedupArgs { qs, target, ideal })
        }
        Command::Audit { common, transcript } => commands::audit(&common.common(), &transcript),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = if matches!(e, CliError::Check(_)) { 2 } else { 1 };
            eprintln!("revelight: error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(code)
        }
    }
}
