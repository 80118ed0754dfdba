//! Self-supervised training loop: crop, build cross-scale pairs, predict the
//! high-scale targets from the low-scale inputs, L1 loss, Adam.

use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bsn::{BsnError, BsnModel};
use crate::imaging::{Image, ImageError};
use crate::pairing::{construct_pairs, validate_params, PairingError, Strategy};
use crate::tensor::{self, AdamState, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("image {index} is {height}x{width}, smaller than the {size}x{size} training patch")]
    Undersized {
        index: usize,
        height: usize,
        width: usize,
        size: usize,
    },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("loss became non-finite ({value}) at iteration {iteration}")]
    NonFinite { iteration: usize, value: f64 },
    #[error("pair audit failed: {0}")]
    Audit(String),
    #[error(transparent)]
    Pairing(#[from] PairingError),
    #[error(transparent)]
    Model(#[from] BsnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Patch size and training pixel-shuffle factor.
    pub s: usize,
    /// Input-to-target scale factor (and test-time pixel-shuffle factor).
    pub t: usize,
    /// Targets per patch.
    pub n: usize,
    pub strategy: Strategy,
    /// Side of the square training crop; multiple of `s`.
    pub patch_size: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
    /// Restricts each crop's pair pool to its first `cap` pairs.
    pub pairs_per_image_cap: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            s: 5,
            t: 2,
            n: 1,
            strategy: Strategy::Consecutive,
            patch_size: 80,
            batch_size: 8,
            iterations: 2000,
            lr: 1e-4,
            seed: 0,
            pairs_per_image_cap: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        validate_params(self.s, self.t, self.n)?;
        if self.patch_size == 0 || self.patch_size % self.s != 0 {
            return Err(TrainError::Config(format!(
                "patch size {} must be a positive multiple of s={}",
                self.patch_size, self.s
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(TrainError::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.pairs_per_image_cap == Some(0) {
            return Err(TrainError::Config("pair cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    /// Mean batch L1 loss per iteration.
    pub losses: Vec<f64>,
    pub wall_time_secs: f64,
    pub checkpoint_path: Option<String>,
}

impl RunReport {
    /// `iteration,loss` lines with a header.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("iteration,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            out.push_str(&format!("{i},{l:e}\n"));
        }
        out
    }

    /// JSON summary without the per-iteration curve.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self.config,
            "iterations": self.losses.len(),
            "final_loss": self.losses.last(),
            "wall_time_secs": self.wall_time_secs,
            "checkpoint_path": self.checkpoint_path,
        })
    }

    /// Mean loss over `range` of iterations.
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let slice = &self.losses[range];
        slice.iter().sum::<f64>() / slice.len() as f64
    }
}

/// Uniform crop whose top-left corner is a multiple of `align`.
pub fn crop_random(image: &Image, size: usize, align: usize, rng: &mut impl Rng) -> Result<Image> {
    if image.height() < size || image.width() < size {
        return Err(TrainError::Undersized {
            index: 0,
            height: image.height(),
            width: image.width(),
            size,
        });
    }
    let align = align.max(1);
    let max_y = (image.height() - size) / align;
    let max_x = (image.width() - size) / align;
    let y = rng.random_range(0..=max_y) * align;
    let x = rng.random_range(0..=max_x) * align;
    Ok(image.crop(y, x, size, size)?)
}

/// Runs `config.iterations` Adam steps on `model`. Deterministic in the
/// config seed, the dataset and the model's initial weights.
pub fn train(dataset: &[Image], config: &TrainConfig, model: &mut BsnModel) -> Result<RunReport> {
    train_with_progress(dataset, config, model, |_, _| {})
}

/// [`train`] with a callback receiving `(iteration, loss)` after each step.
pub fn train_with_progress(
    dataset: &[Image],
    config: &TrainConfig,
    model: &mut BsnModel,
    mut progress: impl FnMut(usize, f64),
) -> Result<RunReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if model.scale() != config.t {
        return Err(TrainError::Config(format!(
            "model scale {} differs from configured t={}",
            model.scale(),
            config.t
        )));
    }
    for (index, img) in dataset.iter().enumerate() {
        if img.height() < config.patch_size || img.width() < config.patch_size {
            return Err(TrainError::Undersized {
                index,
                height: img.height(),
                width: img.width(),
                size: config.patch_size,
            });
        }
        if img.channels() != model.channels() {
            return Err(TrainError::Config(format!(
                "image {index} has {} channels, model expects {}",
                img.channels(),
                model.channels()
            )));
        }
    }

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::for_params(model.params(), config.lr);
    let mut losses = Vec::with_capacity(config.iterations);

    for iteration in 0..config.iterations {
        let image = &dataset[rng.random_range(0..dataset.len())];
        let crop = crop_random(image, config.patch_size, config.s, &mut rng)?;
        let pair_seed: u64 = rng.random();
        let pairs = construct_pairs(&crop, config.s, config.t, config.n, config.strategy, pair_seed)?;
        if iteration == 0 {
            pairs.audit().map_err(TrainError::Audit)?;
        }

        let pool = config.pairs_per_image_cap.map_or(pairs.num_pairs(), |cap| cap.min(pairs.num_pairs()));
        let picks: Vec<usize> = if pool >= config.batch_size {
            index::sample(&mut rng, pool, config.batch_size).into_vec()
        } else {
            (0..config.batch_size).map(|_| rng.random_range(0..pool)).collect()
        };

        let loss = {
            let mut total: Option<Tensor> = None;
            for &p in &picks {
                let (input, target) = pairs.pair(p);
                let pred = model.forward(&input.to_tensor())?;
                let l = tensor::l1_loss(&pred, &target.to_tensor())?;
                total = Some(match total {
                    Some(acc) => tensor::add(&acc, &l)?,
                    None => l,
                });
            }
            let loss = tensor::scale(&total.expect("batch is non-empty"), 1.0 / picks.len() as f64);
            tensor::backward(&loss)?;
            loss.item()
        };
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { iteration, value: loss });
        }
        adam.step_tensors(model.params_mut())?;
        losses.push(loss);
        progress(iteration, loss);
    }

    Ok(RunReport {
        config: config.clone(),
        losses,
        wall_time_secs: start.elapsed().as_secs_f64(),
        checkpoint_path: None,
    })
}
