//! Command-line driver: synthesize drifting streams, run continual training
//! in several modes, and merge metrics reports into comparison tables.
//!
//! Exit codes: 0 success, 1 I/O, 2 invalid flags, data or report schema,
//! 3 internal contract violation.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use streamprompt::data::{Format, SynthConfig};
use streamprompt::train::TrainMode;

#[derive(Parser, Debug)]
#[command(
    name = "streamprompt",
    version,
    about = "Continual prompt tuning for streaming recommendation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic drifting interaction stream as CSV.
    Synth(SynthArgs),
    /// Train and evaluate one or more modes over a segmented stream.
    Run(Box<RunArgs>),
    /// Merge metrics JSON files into one markdown table.
    Report(ReportArgs),
}

/// Shape of a generated stream.
#[derive(Args, Debug, Clone)]
struct StreamShape {
    #[arg(long, default_value_t = SynthConfig::default().users)]
    users: usize,
    #[arg(long, default_value_t = SynthConfig::default().items)]
    items: usize,
    /// Fraction of users and catalog replaced before each segment, in [0, 1].
    #[arg(long, default_value_t = SynthConfig::default().drift_rate)]
    drift: f64,
    #[arg(long, default_value_t = SynthConfig::default().interactions_per_segment)]
    interactions: usize,
    #[arg(long, default_value_t = SynthConfig::default().clusters)]
    clusters: usize,
}

impl StreamShape {
    fn synth_config(&self, segments: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            users: self.users,
            items: self.items,
            segments,
            drift_rate: self.drift,
            interactions_per_segment: self.interactions,
            clusters: self.clusters,
            seed,
            ..SynthConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    shape: StreamShape,
    #[arg(long, default_value_t = SynthConfig::default().segments)]
    segments: usize,
    #[arg(long, default_value_t = SynthConfig::default().seed)]
    seed: u64,
    #[arg(long, default_value = "stream.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Interaction file with `user,item,timestamp` rows; a synthetic stream
    /// is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// The data file has no header row.
    #[arg(long)]
    no_header: bool,
    /// `csv` or `tsv`; inferred from the file extension by default.
    #[arg(long)]
    format: Option<Format>,
    #[command(flatten)]
    shape: StreamShape,
    #[arg(long, default_value_t = 5)]
    segments: usize,
    /// Comma-separated modes, run in the given order.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "frozen,uniform_replay,full_finetune,prompt_tune"
    )]
    mode: Vec<TrainMode>,
    /// JSON training config; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    prompts_node: Option<usize>,
    #[arg(long)]
    prompts_struct: Option<usize>,
    /// Size of the cross-view codebook.
    #[arg(long)]
    prompts_view: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    replay_fraction: Option<f64>,
    #[arg(long)]
    topk: Option<usize>,
    /// Seeds both training and, without `--data`, stream generation.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Metrics JSON files; the last one is compared against the others.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Also write the table here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::synth(&args),
        Command::Run(args) => commands::run(&args),
        Command::Report(args) => commands::report(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
