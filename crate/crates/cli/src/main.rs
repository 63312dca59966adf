mod chart;
mod commands;

use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

use commands::UsageError;

#[derive(Parser)]
#[command(name = "crayon", version, about = "Grayscale-plus-color-grid image codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode an image into a .cgc file.
    Encode(EncodeArgs),
    /// Decode a .cgc file into an image.
    Decode(DecodeArgs),
    /// Train one model at one grid spacing.
    Train(TrainArgs),
    /// Evaluate a trained model on the test split.
    Eval(EvalArgs),
    /// Train and evaluate across grid spacings and write summary CSVs.
    Sweep(SweepArgs),
}

#[derive(Args)]
pub struct EncodeArgs {
    pub input: std::path::PathBuf,
    pub output: std::path::PathBuf,
    /// Grid spacing in pixels.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    pub n: u16,
    /// Grid offset as `row,col`, each smaller than n.
    #[arg(long)]
    pub phase: Option<String>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("decoder").required(true).args(["model", "naive"])))]
pub struct DecodeArgs {
    pub input: std::path::PathBuf,
    pub output: std::path::PathBuf,
    /// Checkpoint to colorize with.
    #[arg(long)]
    pub model: Option<std::path::PathBuf>,
    /// Nearest-sample chroma fill instead of a model.
    #[arg(long)]
    pub naive: bool,
}

#[derive(Args, Clone)]
pub struct TrainingFlags {
    /// Dataset root containing train/ and val/.
    #[arg(long)]
    pub data: std::path::PathBuf,
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: u64,
    #[arg(long, default_value_t = 320)]
    pub crop: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Validation images held out as the test split.
    #[arg(long, default_value_t = 50)]
    pub test_count: usize,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub flags: TrainingFlags,
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    pub n: u16,
    /// Output directory for the checkpoint, epoch CSV and manifest.
    #[arg(long)]
    pub out: std::path::PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: std::path::PathBuf,
    #[arg(long)]
    pub model: std::path::PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    pub n: u16,
    #[arg(long, default_value = ".")]
    pub out: std::path::PathBuf,
    #[arg(long, default_value_t = 320)]
    pub crop: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub test_count: usize,
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub flags: TrainingFlags,
    #[arg(long, value_delimiter = ',', default_value = "6,15,20,40,50,60,80,100")]
    pub n_values: Vec<u16>,
    #[arg(long)]
    pub out: std::path::PathBuf,
    /// Skip training and evaluate existing `crayon_n{n}_best.ckpt` files.
    #[arg(long)]
    pub eval_only: bool,
    /// Where to find checkpoints with --eval-only (defaults to --out).
    #[arg(long)]
    pub models: Option<std::path::PathBuf>,
    /// Evaluate with the true chroma instead of a model.
    #[arg(long, hide = true)]
    pub oracle: bool,
    /// Also write summary.svg.
    #[arg(long)]
    pub svg: bool,
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("CRAYON_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| UsageError(format!("CRAYON_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Encode(a) => commands::encode(&a),
        Command::Decode(a) => commands::decode(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Sweep(a) => commands::sweep(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
