//! `nsp`: dataset synthesis, training, denoising, super-resolution, noise
//! analysis and trend experiments.
//!
//! Machine-readable results go to stdout (JSON) or named files (CSV);
//! progress and errors go to stderr.

mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nsp_core::experiment::Axis;
use nsp_core::imaging::CleanKind;
use nsp_core::pairing::Strategy;

#[derive(Parser, Debug)]
#[command(name = "nsp", version, about = "Self-supervised denoising by next-scale prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize clean/noisy image pairs and a manifest.
    MakeDataset(MakeDatasetArgs),
    /// Train a blind-spot network on the noisy images of a dataset.
    Train(TrainArgs),
    /// Denoise an image with a trained checkpoint.
    Denoise(DenoiseArgs),
    /// Super-resolve an image by the checkpoint's scale factor.
    Sr(SrArgs),
    /// Report noise autocorrelation before and after pair construction.
    Analyze(AnalyzeArgs),
    /// Train one model per (axis value, seed) and tabulate held-out scores.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct MakeDatasetArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Image size as HxW.
    #[arg(long, default_value = "128x128", value_parser = parse_size)]
    size: (usize, usize),
    #[arg(long, default_value = "blobs,checker,bars", value_delimiter = ',')]
    kinds: Vec<CleanKind>,
    /// Noise standard deviation in [0,1] intensity units; `25/255` is accepted.
    #[arg(long, default_value = "25/255", value_parser = parse_fraction)]
    sigma: f64,
    #[arg(long, default_value = "box3", value_parser = ["identity", "box3", "box5"])]
    kernel: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clean images are synthesized at this factor and box-downsampled.
    #[arg(long, default_value_t = 2)]
    hr_factor: usize,
}

#[derive(Args, Debug, Clone)]
struct TrainingFlags {
    #[arg(long, default_value_t = 5)]
    s: usize,
    #[arg(long, default_value_t = 2)]
    t: usize,
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, default_value = "consecutive", value_parser = parse_strategy)]
    strategy: Strategy,
    #[arg(long, default_value_t = 80)]
    patch: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Width of the network's hidden layers.
    #[arg(long, default_value_t = nsp_core::bsn::DEFAULT_BASE_CHANNELS)]
    base: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path; the loss CSV and JSON summary are written beside it.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainingFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Leave the last K images of the manifest out of training.
    #[arg(long, default_value_t = 0)]
    holdout: usize,
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Print PSNR/SSIM of the output against this clean image.
    #[arg(long)]
    metrics_against: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SrMode {
    /// Split by t, predict each sub-image, reassemble.
    Pd,
    /// One forward pass over the whole image.
    Direct,
}

#[derive(Args, Debug)]
struct SrArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = SrMode::Pd)]
    mode: SrMode,
    #[arg(long)]
    metrics_against: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// When given, the analyzed field is `in − clean`.
    #[arg(long)]
    clean: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    s: usize,
    #[arg(long, default_value_t = 2)]
    t: usize,
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, default_value = "consecutive", value_parser = parse_strategy)]
    strategy: Strategy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Semicolon-separated `dy,dx` lags.
    #[arg(long, default_value = "0,1;1,0;1,1", value_parser = parse_lags)]
    lags: Lags,
}

#[derive(Debug, Clone, PartialEq)]
struct Lags(Vec<(isize, isize)>);

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_axis)]
    axis: Axis,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// CSV output path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainingFlags,
    /// The last K images of the manifest form the evaluation split.
    #[arg(long, default_value_t = 2)]
    holdout: usize,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let dim = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad dimension {v:?}"));
    let (h, w) = (dim(h)?, dim(w)?);
    if h == 0 || w == 0 {
        return Err("dimensions must be positive".into());
    }
    Ok((h, w))
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let value = match s.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (
                a.trim().parse().map_err(|_| format!("bad number {a:?}"))?,
                b.trim().parse().map_err(|_| format!("bad number {b:?}"))?,
            );
            a / b
        }
        None => s.trim().parse().map_err(|_| format!("bad number {s:?}"))?,
    };
    if !value.is_finite() || value < 0.0 {
        return Err(format!("expected a non-negative finite value, got {s:?}"));
    }
    Ok(value)
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: nsp_core::pairing::PairingError| e.to_string())
}

fn parse_axis(s: &str) -> Result<Axis, String> {
    s.parse().map_err(|e: nsp_core::experiment::ExperimentError| e.to_string())
}

fn parse_lags(s: &str) -> Result<Lags, String> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|pair| {
            let (dy, dx) = pair.split_once(',').ok_or_else(|| format!("lag {pair:?} is not dy,dx"))?;
            let num = |v: &str| v.trim().parse::<isize>().map_err(|_| format!("bad lag component {v:?}"));
            Ok((num(dy)?, num(dx)?))
        })
        .collect::<Result<Vec<_>, String>>()
        .and_then(|lags| if lags.is_empty() { Err("no lags given".into()) } else { Ok(Lags(lags)) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::MakeDataset(a) => commands::make_dataset(a),
        Command::Train(a) => commands::train(a),
        Command::Denoise(a) => commands::denoise(a),
        Command::Sr(a) => commands::sr(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Experiment(a) => commands::experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code())
        }
    }
}
