//! Command-line driver: train, evaluate, visualize, sweep and bench.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.

mod commands;
mod output;

use clap::{Parser, Subcommand};
use difflink::diffraction::Engine;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(
    name = "difflink",
    version,
    about = "Diffractive end-to-end link simulator and trainer"
)]
pub struct Cli {
    /// Experiment config (TOML); the built-in reference config when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "DIFFLINK_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_parser = parse_engine)]
    pub engine: Option<Engine>,
    /// Zero-padding factor of the FFT engine.
    #[arg(long, global = true)]
    pub padding: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a transceiver; writes checkpoint, loss CSV and manifest.
    Train,
    /// Measure SER of a trained checkpoint.
    Eval {
        /// Defaults to `<out>/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// `start:step:stop` in dB or a comma list; defaults to the config grid.
        #[arg(long, allow_hyphen_values = true, value_parser = parse_snr)]
        snr: Option<SnrGrid>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Dump the field magnitude at every plane for one symbol.
    Visualize {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        symbol: usize,
        /// Adds receiver noise at this SNR; noiseless when omitted.
        #[arg(long, allow_hyphen_values = true)]
        snr_db: Option<f64>,
    },
    /// Run a resumable sweep described by a sweep file.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Time both propagation engines.
    Bench {
        /// Ascending side lengths.
        #[arg(long, value_delimiter = ',', default_values_t = vec![8usize, 16, 32, 64])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = difflink::bench::MIN_REPS)]
        reps: usize,
    },
}

fn parse_engine(s: &str) -> Result<Engine, String> {
    s.parse().map_err(|e: difflink::Error| e.to_string())
}

/// SNR points in dB.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrGrid(pub Vec<f64>);

fn parse_snr(s: &str) -> Result<SnrGrid, String> {
    parse_snr_values(s).map(SnrGrid)
}

fn parse_snr_values(s: &str) -> Result<Vec<f64>, String> {
    let nums = |parts: Vec<&str>| -> Result<Vec<f64>, String> {
        parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
            .collect()
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts.len() {
        1 => nums(s.split(',').collect()),
        3 => {
            let v = nums(parts)?;
            if !(v[1] > 0.0) || v[2] < v[0] {
                return Err("grid needs step > 0 and stop >= start".into());
            }
            Ok(difflink::config::snr_grid(v[0], v[2], v[1]))
        }
        _ => Err("expected start:step:stop or a comma list".into()),
    }
}

/// Failure split by exit code.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<difflink::Error> for Failure {
    fn from(e: difflink::Error) -> Self {
        use difflink::Error as E;
        match e {
            E::Config { .. } | E::InvalidParameter { .. } | E::InvalidSymbol { .. } => {
                Failure::Config(e.into())
            }
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
