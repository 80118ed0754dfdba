//! Trend experiments: one model per (axis value, seed), evaluated on a
//! held-out split.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::bsn::{BsnError, BsnModel};
use crate::imaging::{psnr, ssim, Image, ImageError};
use crate::pairing::Strategy;
use crate::pipeline::{denoise, PipelineError};
use crate::train::{train, TrainConfig, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Model(#[from] BsnError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Strategy,
    N,
    T,
}

impl FromStr for Axis {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strategy" => Ok(Axis::Strategy),
            "n" => Ok(Axis::N),
            "t" => Ok(Axis::T),
            other => Err(ExperimentError::Invalid(format!("unknown axis {other:?}"))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Strategy => "strategy",
            Axis::N => "n",
            Axis::T => "t",
        })
    }
}

/// `base` with the axis set to `value` and the seed replaced.
pub fn apply_axis(base: &TrainConfig, axis: Axis, value: &str, seed: u64) -> Result<TrainConfig> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    let parse_int = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| ExperimentError::Invalid(format!("axis {axis} needs an integer, got {v:?}")))
    };
    match axis {
        Axis::Strategy => {
            cfg.strategy = value
                .parse::<Strategy>()
                .map_err(|e| ExperimentError::Invalid(e.to_string()))?
        }
        Axis::N => cfg.n = parse_int(value)?,
        Axis::T => cfg.t = parse_int(value)?,
    }
    Ok(cfg)
}

/// Held-out pair for evaluation.
#[derive(Debug, Clone)]
pub struct EvalImage {
    pub noisy: Image,
    pub clean: Image,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub axis_value: String,
    pub seed: u64,
    pub psnr: f64,
    pub ssim: f64,
    pub noisy_psnr: f64,
    pub final_loss: f64,
    pub wall_time_secs: f64,
}

/// Mean PSNR / SSIM of `model`'s denoised output over `eval`.
pub fn evaluate(model: &BsnModel, eval: &[EvalImage]) -> Result<(f64, f64)> {
    if eval.is_empty() {
        return Err(ExperimentError::Invalid("empty evaluation set".into()));
    }
    let (mut p, mut s) = (0.0, 0.0);
    for e in eval {
        let out = denoise(model, &e.noisy)?;
        p += psnr(&out, &e.clean)?;
        s += ssim(&out, &e.clean)?;
    }
    let n = eval.len() as f64;
    Ok((p / n, s / n))
}

/// Trains a fresh model under `config` and evaluates it. The model's weights
/// are initialized from the config seed.
pub fn run_cell(
    axis_value: &str,
    train_set: &[Image],
    eval: &[EvalImage],
    config: &TrainConfig,
    base_channels: usize,
) -> Result<(CellResult, BsnModel)> {
    let channels = train_set
        .first()
        .map(Image::channels)
        .ok_or_else(|| ExperimentError::Invalid("empty training set".into()))?;
    let mut model = BsnModel::build(channels, config.t, base_channels, config.seed)?;
    let report = train(train_set, config, &mut model)?;
    let (p, s) = evaluate(&model, eval)?;
    let noisy_psnr = eval.iter().map(|e| psnr(&e.noisy, &e.clean)).sum::<std::result::Result<f64, _>>()? / eval.len() as f64;
    Ok((
        CellResult {
            axis_value: axis_value.to_string(),
            seed: config.seed,
            psnr: p,
            ssim: s,
            noisy_psnr,
            final_loss: report.losses.last().copied().unwrap_or(f64::NAN),
            wall_time_secs: report.wall_time_secs,
        },
        model,
    ))
}

pub const EXPERIMENT_CSV_HEADER: &str = "axis_value,seed,psnr,ssim";

pub fn experiment_csv(cells: &[CellResult]) -> String {
    let mut out = format!("{EXPERIMENT_CSV_HEADER}\n");
    for c in cells {
        out.push_str(&format!("{},{},{:.6},{:.6}\n", c.axis_value, c.seed, c.psnr, c.ssim));
    }
    out
}

/// Mean PSNR per axis value, in first-seen order.
pub fn mean_psnr_by_value(cells: &[CellResult]) -> Vec<(String, f64)> {
    let mut order: Vec<String> = Vec::new();
    for c in cells {
        if !order.contains(&c.axis_value) {
            order.push(c.axis_value.clone());
        }
    }
    order
        .into_iter()
        .map(|v| {
            let vals: Vec<f64> = cells.iter().filter(|c| c.axis_value == v).map(|c| c.psnr).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            (v, mean)
        })
        .collect()
}
