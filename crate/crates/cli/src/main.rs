mod commands;
mod output;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hbsim::config::CONFIG_ENV;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Naive,
    Optimized,
}

/// Functional and timing simulator of an embedded-FPGA LLM decoding
/// accelerator.
#[derive(Debug, Parser)]
#[command(name = "hbsim", version)]
pub struct Cli {
    /// TOML file merged over the built-in presets.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving the artifacts and the run manifest.
    #[arg(long, global = true, default_value = "hbsim-out")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bandwidth utilization of one channel over BTT 2^10..2^18.
    SweepBtt {
        #[arg(long, default_value = "kv260")]
        platform: String,
    },
    /// Attention stage timeline of one decode step.
    Schedule {
        #[arg(long, default_value = "llama3-8b")]
        model: String,
        /// Query heads per kv head; defaults to the model's.
        #[arg(long)]
        group_size: Option<usize>,
        /// Keys attended, the new token included.
        #[arg(long, default_value_t = 1024)]
        context: usize,
        #[arg(long, value_enum, default_value_t = Mode::Optimized)]
        mode: Mode,
    },
    /// Decode tokens/s with the given number of cached tokens.
    Throughput {
        #[arg(long, default_value = "llama3-8b")]
        model: String,
        #[arg(long, default_value = "kv260")]
        platform: String,
        #[arg(long, default_value_t = 32)]
        context: usize,
    },
    /// Byte breakdown of a model's weights.
    Breakdown {
        #[arg(long, default_value = "llama3-8b")]
        model: String,
    },
    /// Per-channel DRAM budget; exits 1 if it does not fit.
    Capacity {
        #[arg(long, default_value = "llama3-8b")]
        model: String,
        #[arg(long, default_value = "kv260")]
        platform: String,
        /// Defaults to the largest power of two that fits.
        #[arg(long)]
        context: Option<usize>,
    },
    /// Runs the oracle checks; exits 1 if any fails.
    Verify {
        /// GEMV shapes as ROWSxCOLS.
        #[arg(long, value_delimiter = ',', default_value = "1x1,1x300,64x128,13x257")]
        sizes: Vec<String>,
        /// Weight directory whose manifest hashes are checked.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Tiny model decoded through both datapaths; exits 1 outside the bound.
    RunTiny {
        #[arg(long, default_value = "tiny")]
        model: String,
        #[arg(long, default_value_t = 8)]
        steps: usize,
    },
}

/// Why a command did not succeed.
#[derive(Debug)]
pub enum Failure {
    /// A check ran and failed.
    Check(String),
    /// Bad arguments, presets or files.
    Usage(anyhow::Error),
}

impl From<hbsim::Error> for Failure {
    fn from(e: hbsim::Error) -> Self {
        match e {
            hbsim::Error::Capacity(_) | hbsim::Error::WeightFile(_) => Failure::Check(e.to_string()),
            e => Failure::Usage(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
