//! `hat`: splitting, parameter counts, toy training, generation, scheduler
//! benchmarks, compression reports and checkpoint checks.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Log verbosity is read from this variable (`error` … `trace`).
const LOG_ENV: &str = "HAT_LOG";

#[derive(Parser, Debug)]
#[command(name = "hat", version, about = "Hierarchical byte/word transformer toolkit")]
struct Cli {
    /// Print machine-readable `key=value` lines instead of aligned text.
    #[arg(long, global = true)]
    kv: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split text into words, one per line.
    Split(SplitArgs),
    /// Exact parameter counts of a configuration.
    CountParams(CountArgs),
    /// Train a small model on a text file and print the loss curve.
    TrainToy(TrainArgs),
    /// Generate bytes from a checkpoint.
    Generate(GenerateArgs),
    /// Run many sessions through the batch scheduler and report its work.
    BenchSched(BenchArgs),
    /// Bytes per backbone position over corpus files.
    Compress(CompressArgs),
    /// Save and reload a checkpoint, checking bit-exactness.
    CkptRoundtrip(RoundtripArgs),
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// Text to split.
    #[arg(long, conflicts_with = "file", required_unless_present = "file")]
    text: Option<String>,
    /// File to split.
    #[arg(long)]
    file: Option<PathBuf>,
    #[arg(long, default_value_t = hat_core::splitter::DEFAULT_MAX_WORD_BYTES)]
    max_word_bytes: usize,
    /// Print `start:end` byte offsets instead of the words.
    #[arg(long)]
    offsets: bool,
}

#[derive(Args, Debug)]
struct CountArgs {
    /// Config file, or a bundled name: table1, table2, micro.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args, Debug)]
struct ModelSource {
    /// Checkpoint to load.
    #[arg(long, conflicts_with = "config")]
    ckpt: Option<PathBuf>,
    /// Config for a freshly initialized model (file or bundled name).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Initialization seed with `--config`.
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Config file or bundled name.
    #[arg(long, default_value = "micro")]
    config: PathBuf,
    /// UTF-8 training text.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 2000)]
    steps: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Plateau learning rate (warmup is 5% of steps, decay the last 25%).
    #[arg(long)]
    lr: Option<f64>,
    /// Bytes per training window; whole corpus when omitted.
    #[arg(long)]
    window: Option<usize>,
    /// Freeze the backbone for this many steps, then train it at 0.1x.
    #[arg(long)]
    freeze_backbone: Option<u64>,
    /// Train only query and key projections.
    #[arg(long, conflicts_with = "freeze_backbone")]
    qk_only: bool,
    /// Group policy file (`<group>.frozen_until_step`, `<group>.lr_multiplier`,
    /// `trainable_suffixes`).
    #[arg(long, conflicts_with_all = ["freeze_backbone", "qk_only"])]
    policy: Option<PathBuf>,
    /// Stop once the loss falls below this value.
    #[arg(long)]
    stop_below: Option<f64>,
    /// Train in 64-bit floats (the checkpoint is still written as f32).
    #[arg(long)]
    f64: bool,
    /// Where to write the trained checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SamplingArgs {
    /// Argmax decoding (the default).
    #[arg(long, conflicts_with = "temperature")]
    greedy: bool,
    /// Sample at this temperature instead.
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generated-byte budget.
    #[arg(long, default_value_t = 256)]
    max_bytes: usize,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    model: ModelSource,
    #[arg(long, default_value = "")]
    prompt: String,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Also print the prompt before the generated bytes.
    #[arg(long)]
    echo: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    model: ModelSource,
    /// Prompts, one per line; defaults to slices of a bundled English text.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Number of built-in prompts when `--prompts` is absent.
    #[arg(long, default_value_t = 16)]
    count: usize,
    /// `boundary-sync`, `stride:<n>`, or `both` (boundary-sync and stride:4).
    #[arg(long, default_value = "both")]
    policy: String,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Compare every session with an unbatched run of the same prompt.
    #[arg(long)]
    check: bool,
    /// Write the per-tick trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompressArgs {
    /// UTF-8 text files.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[arg(long, default_value_t = hat_core::splitter::DEFAULT_MAX_WORD_BYTES)]
    max_word_bytes: usize,
}

#[derive(Args, Debug)]
struct RoundtripArgs {
    #[command(flatten)]
    model: ModelSource,
    /// Text for the forward-pass comparison.
    #[arg(long, default_value = "Round trip: FooBar, 3.14!")]
    text: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
