//! Command-line driver for the extraction engine.
//!
//! Results go to stdout as JSON or CSV; logs go to stderr. Usage errors exit
//! with status 2, runtime failures with status 1.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dense_core::training::TrainMode;

#[derive(Parser)]
#[command(
    name = "dense",
    version,
    about = "Streaming causal target speech extraction"
)]
struct Cli {
    /// Evaluate independent items one at a time instead of in parallel.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mix a target with an interferer and optional noise.
    Mix(MixArgs),
    /// Train a baseline or dense model on a manifest.
    Train(TrainArgs),
    /// Offline extraction of one mixture.
    Extract(ExtractArgs),
    /// Streaming extraction of one mixture with a latency report.
    Stream(StreamArgs),
    /// Score estimates against references.
    Eval(EvalArgs),
    /// Describe a checkpoint.
    Inspect(InspectArgs),
    /// Measure streaming speed on synthetic input.
    Bench(BenchArgs),
    /// Train a dense model per sample delay and report held-out SI-SDRi.
    AblateDelay(AblateArgs),
    /// Write static and per-frame embeddings as CSV.
    DumpEmb(DumpArgs),
    /// Write a synthetic training set and its manifest.
    Toy(ToyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ExtractMode {
    Static,
    Dynamic,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    DenseAr,
    DenseParis,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Baseline => TrainMode::Baseline,
            ModeArg::DenseAr => TrainMode::DenseAr,
            ModeArg::DenseParis => TrainMode::DenseParis,
        }
    }
}

#[derive(Args)]
struct MixArgs {
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    interf: PathBuf,
    #[arg(long)]
    noise: Option<PathBuf>,
    /// Target-to-interferer ratio in dB.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    sir: f64,
    /// Target-to-noise ratio in dB; `inf` disables noise.
    #[arg(long, default_value_t = f64::INFINITY, allow_hyphen_values = true)]
    snr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the cropped target here.
    #[arg(long)]
    target_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "baseline")]
    mode: ModeArg,
    #[arg(long, default_value_t = 3)]
    iters: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    delay: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f32,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Utterances held out for evaluation (default: a tenth, at least one).
    #[arg(long)]
    held_out: Option<usize>,
    /// Starting checkpoint; required for dense modes.
    #[arg(long)]
    init_ckpt: Option<PathBuf>,
    /// Network size for a fresh baseline: `default`, `micro` or a JSON file.
    #[arg(long, default_value = "default")]
    config: String,
    /// Keep training the baseline-scope tensors in dense modes.
    #[arg(long)]
    no_freeze: bool,
    #[arg(long)]
    out_ckpt: PathBuf,
    /// Per-epoch CSV record.
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    mixture: PathBuf,
    #[arg(long)]
    enroll: PathBuf,
    /// Clean target used as the (delayed) condition in dynamic mode; without
    /// it the engine conditions on its own output.
    #[arg(long)]
    condition: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "static")]
    mode: ExtractMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    mixture: PathBuf,
    #[arg(long)]
    enroll: PathBuf,
    /// Samples per push.
    #[arg(long, default_value_t = 8)]
    chunk: usize,
    #[arg(long, value_enum, default_value = "dynamic")]
    mode: ExtractMode,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the latency JSON to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "manifest", requires_all = ["reference", "mix"])]
    est: Option<PathBuf>,
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long)]
    mix: Option<PathBuf>,
    /// Manifest whose records carry an `estimate` path.
    #[arg(long, conflicts_with = "est")]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    ckpt: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Checkpoint to time; a fresh one of `--config` size otherwise.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    config: String,
    /// Seconds of audio to stream.
    #[arg(long, default_value_t = 5.0)]
    duration: f64,
}

#[derive(Args)]
struct AblateArgs {
    /// Comma-separated sample delays.
    #[arg(long, value_delimiter = ',', required = true)]
    delays: Vec<usize>,
    #[arg(long)]
    manifest: PathBuf,
    /// Trained baseline checkpoint.
    #[arg(long)]
    init_ckpt: PathBuf,
    #[arg(long, value_enum, default_value = "dense-paris")]
    mode: ModeArg,
    #[arg(long, default_value_t = 1)]
    iters: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f32,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    held_out: Option<usize>,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    mixture: PathBuf,
    #[arg(long)]
    enroll: PathBuf,
    /// Clean target for the condition; the engine's own output otherwise.
    #[arg(long)]
    condition: Option<PathBuf>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 240)]
    count: usize,
    /// Mixture length in samples.
    #[arg(long, default_value_t = 2000)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
