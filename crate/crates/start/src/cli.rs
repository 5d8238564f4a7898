use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::cmd;

#[derive(Debug, Parser)]
#[command(name = "start", version, about = "Selective state space models with token-aware style augmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Leave-one-domain-out training on the synthetic benchmark.
    Train(TrainArgs),
    /// Token-level MMD between source domains for a trained model.
    AnalyzeGap(GapArgs),
    /// Run the invariant suite and print a pass/fail table.
    Verify(VerifyArgs),
    /// Time the sequential and parallel scans over sequence lengths.
    Bench(BenchArgs),
}

pub const VARIANTS: [&str; 5] = ["none", "start-m", "start-x", "random-token", "full-seq"];

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Configuration file (text or JSON). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = VARIANTS)]
    pub variant: Option<String>,
    #[arg(long)]
    pub p_token: Option<f64>,
    #[arg(long)]
    pub apply_prob: Option<f64>,
    /// First training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Reuse a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    /// Worker threads for independent runs (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GapArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Block index; defaults to the config's gap layer (last block).
    #[arg(long)]
    pub layer: Option<usize>,
    /// `median` or a positive bandwidth.
    #[arg(long)]
    pub gamma: Option<String>,
    /// Compare two halves of the model's own training split instead of the
    /// source domains.
    #[arg(long)]
    pub split_halves: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Only run checks whose group or name contains this string.
    #[arg(long)]
    pub filter: Option<String>,
    /// Test hook: scale parallel-scan outputs by 1 + 1e-6.
    #[arg(long)]
    pub break_scan: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [256usize, 1024, 4096, 16384])]
    pub lengths: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub state: usize,
    /// Timed repetitions per length; the fastest is reported.
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Largest accepted growth exponent of sequential time in L.
    #[arg(long, default_value_t = 1.15)]
    pub max_exponent: f64,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let raw: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let result = match &cli.command {
        Command::Train(a) => cmd::train::run(a, raw),
        Command::AnalyzeGap(a) => cmd::gap::run(a, raw),
        Command::Verify(a) => cmd::verify::run(a),
        Command::Bench(a) => cmd::bench::run(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
