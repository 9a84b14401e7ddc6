//! `ugsd` - run the cloud verifier service, execute edge decoding
//! experiments and sweeps, and score outputs.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

mod config;
mod eval;
mod run;
mod serve;
mod sweep;
mod workload;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig};
use sweep::SweepAxis;

#[derive(Parser)]
#[command(
    name = "ugsd",
    version,
    about = "Entropy-gated edge-cloud speculative decoding"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Base configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Gate threshold in nats; accepts inf and -inf.
    #[arg(long)]
    gamma: Option<f64>,
    /// Rank acceptance threshold R.
    #[arg(long)]
    rank_threshold: Option<u32>,
    /// Fixed block length, overriding the adaptive controller.
    #[arg(long)]
    fixed_l: Option<usize>,
    /// Run seed; all randomness derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Transport: inprocess or stream.
    #[arg(long)]
    transport: Option<String>,
    /// host:port of a running verifier service (stream transport).
    #[arg(long)]
    stream_addr: Option<String>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let overrides = Overrides {
            gamma: self.gamma,
            rank_threshold: self.rank_threshold,
            fixed_l: self.fixed_l,
            seed: self.seed,
            output_dir: self.output_dir.clone(),
            transport: self.transport.clone(),
            stream_addr: self.stream_addr.clone(),
        };
        RunConfig::load(&self.config, &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Start the cloud verifier service and serve until interrupted.
    Serve {
        /// Model snapshot document for the verifier.
        #[arg(long)]
        snapshot: PathBuf,
        /// Listen address, host:port (port 0 picks a free port).
        #[arg(long, default_value = "127.0.0.1:7401")]
        addr: String,
    },
    /// Run a full experiment and write transcripts, traces, and CSV reports.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Repeat a run over a grid of one axis and emit one combined CSV.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Axis to sweep: gamma, r, or l.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated grid values; l also accepts "dynamic".
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score candidate transcripts against references.
    Eval {
        /// Candidate file: one space-separated token-id sequence per line.
        #[arg(long)]
        candidates: PathBuf,
        /// Reference file: alternatives separated by `|`, aligned by line.
        #[arg(long)]
        references: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Serve { snapshot, addr } => {
            serve::cmd_serve(&snapshot, &addr).map_err(Failure::Runtime)
        }
        Command::Run { config } => {
            let cfg = config.load().map_err(Failure::Usage)?;
            run::cmd_run(&cfg).map_err(Failure::Runtime)
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
        } => {
            let cfg = config.load().map_err(Failure::Usage)?;
            if values.is_empty() {
                return Err(Failure::Usage(anyhow::anyhow!("sweep needs --values")));
            }
            let csv = sweep::cmd_sweep(&cfg, axis, &values).map_err(Failure::Runtime)?;
            sweep::write_or_print(&csv, out.as_deref()).map_err(Failure::Runtime)
        }
        Command::Eval {
            candidates,
            references,
        } => {
            let csv = eval::cmd_eval(&candidates, &references).map_err(Failure::Usage)?;
            print!("{csv}");
            Ok(())
        }
    }
}
