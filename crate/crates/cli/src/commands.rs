use std::path::{Path, PathBuf};

use nsp_core::bsn::{load_checkpoint, save_checkpoint, BsnModel};
use nsp_core::dataset::{load_dataset, write_dataset, DatasetSpec, LoadedSample};
use nsp_core::experiment::{apply_axis, experiment_csv, mean_psnr_by_value, run_cell, EvalImage};
use nsp_core::imaging::{autocorrelation, load_image, psnr, save_image, ssim, Image, ImageError};
use nsp_core::pairing::{construct_pairs, count_distribute_variants, count_pairs, count_random_pd};
use nsp_core::pipeline::{denoise as run_denoise, super_resolve, super_resolve_direct};
use nsp_core::train::{train_with_progress, TrainConfig};
use num_bigint::BigUint;
use serde_json::{json, Value};

use crate::failure::{Class, Failure};
use crate::{AnalyzeArgs, DenoiseArgs, ExperimentArgs, MakeDatasetArgs, SrArgs, TrainArgs, TrainingFlags};

type Result<T> = std::result::Result<T, Failure>;

/// Big integers are printed in full up to this many digits.
const MAX_PRINTED_DIGITS: usize = 1000;

fn print_json(value: &Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json"));
}

/// JSON has no infinity; identical images report `"inf"`.
fn db(value: f64) -> Value {
    if value.is_finite() {
        json!(value)
    } else {
        json!("inf")
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Failure::new(Class::Data, format!("cannot write {}: {e}", path.display())))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn make_dataset(a: MakeDatasetArgs) -> Result<()> {
    let spec = DatasetSpec {
        count: a.count,
        height: a.size.0,
        width: a.size.1,
        kinds: a.kinds,
        sigma: a.sigma,
        kernel: a.kernel,
        seed: a.seed,
        hr_factor: a.hr_factor,
    };
    let manifest = write_dataset(&a.out, &spec)?;
    eprintln!("wrote {} image pairs to {}", manifest.images.len(), a.out.display());
    print_json(&json!({
        "out": a.out.display().to_string(),
        "images": manifest.images.len(),
        "height": spec.height,
        "width": spec.width,
        "sigma": spec.sigma,
        "kernel": spec.kernel,
        "seed": spec.seed,
    }));
    Ok(())
}

fn config_from(flags: &TrainingFlags, seed: u64) -> TrainConfig {
    TrainConfig {
        s: flags.s,
        t: flags.t,
        n: flags.n,
        strategy: flags.strategy,
        patch_size: flags.patch,
        batch_size: flags.batch,
        iterations: flags.iters,
        lr: flags.lr,
        seed,
        pairs_per_image_cap: None,
    }
}

fn split(samples: Vec<LoadedSample>, holdout: usize) -> Result<(Vec<LoadedSample>, Vec<LoadedSample>)> {
    if holdout >= samples.len() {
        return Err(Failure::new(
            Class::Usage,
            format!("holdout {holdout} leaves no training images out of {}", samples.len()),
        ));
    }
    let mut train = samples;
    let held = train.split_off(train.len() - holdout);
    Ok((train, held))
}

fn progress_logger(iterations: usize) -> impl FnMut(usize, f64) {
    let every = (iterations / 20).max(1);
    move |i, loss| {
        if (i + 1) % every == 0 || i + 1 == iterations {
            eprintln!("iteration {:>6}/{iterations}  loss {loss:.5}", i + 1);
        }
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let (train_set, _) = split(load_dataset(&a.data)?, a.holdout)?;
    let images: Vec<Image> = train_set.into_iter().map(|s| s.noisy).collect();
    let config = config_from(&a.flags, a.seed);
    config.validate()?;
    let channels = images.first().map(Image::channels).unwrap_or(1);
    let mut model = BsnModel::build(channels, config.t, a.flags.base, a.seed)?;
    eprintln!(
        "training on {} images: s={} t={} n={} {} patch={} batch={} iters={}",
        images.len(),
        config.s,
        config.t,
        config.n,
        config.strategy,
        config.patch_size,
        config.batch_size,
        config.iterations
    );
    let mut report = train_with_progress(&images, &config, &mut model, progress_logger(config.iterations))?;
    save_checkpoint(&model, &a.out)?;
    report.checkpoint_path = Some(a.out.display().to_string());
    write_file(&sibling(&a.out, ".loss.csv"), &report.loss_csv())?;
    let summary = report.summary_json();
    write_file(
        &sibling(&a.out, ".summary.json"),
        &(serde_json::to_string_pretty(&summary).expect("json") + "\n"),
    )?;
    print_json(&summary);
    Ok(())
}

fn metrics(output: &Image, clean_path: &Path) -> Result<Value> {
    let clean = load_image(clean_path)?;
    Ok(json!({
        "psnr": db(psnr(output, &clean)?),
        "ssim": ssim(output, &clean)?,
    }))
}

pub fn denoise(a: DenoiseArgs) -> Result<()> {
    let model = load_checkpoint(&a.ckpt)?;
    let noisy = load_image(&a.input)?;
    let out = run_denoise(&model, &noisy)?;
    save_image(&out, &a.out)?;
    eprintln!("denoised {} -> {}", a.input.display(), a.out.display());
    if let Some(clean) = &a.metrics_against {
        print_json(&metrics(&out, clean)?);
    }
    Ok(())
}

pub fn sr(a: SrArgs) -> Result<()> {
    let model = load_checkpoint(&a.ckpt)?;
    let noisy = load_image(&a.input)?;
    let out = match a.mode {
        crate::SrMode::Pd => super_resolve(&model, &noisy)?,
        crate::SrMode::Direct => super_resolve_direct(&model, &noisy)?,
    };
    save_image(&out, &a.out)?;
    eprintln!(
        "super-resolved {}x{} -> {}x{}",
        noisy.height(),
        noisy.width(),
        out.height(),
        out.width()
    );
    if let Some(clean) = &a.metrics_against {
        print_json(&metrics(&out, clean)?);
    }
    Ok(())
}

fn big(value: &BigUint) -> Value {
    let digits = value.to_string();
    if digits.len() <= MAX_PRINTED_DIGITS {
        json!({ "digits": digits.len(), "value": digits })
    } else {
        json!({ "digits": digits.len(), "value": null })
    }
}

pub fn analyze(a: AnalyzeArgs) -> Result<()> {
    let image = load_image(&a.input)?;
    let (field, source) = match &a.clean {
        Some(path) => (image.sub(&load_image(path)?)?, "noisy-minus-clean"),
        None => (image, "image"),
    };
    // Pair construction needs whole patches; trailing rows/columns are dropped.
    let (c, h, w) = field.dims();
    let (ch, cw) = (h / a.s * a.s, w / a.s * a.s);
    if ch == 0 || cw == 0 {
        return Err(Failure::new(Class::Usage, format!("image {h}x{w} is smaller than s={}", a.s)));
    }
    let field = field.crop(0, 0, ch, cw)?;
    let pairs = construct_pairs(&field, a.s, a.t, a.n, a.strategy, a.seed)?;

    let mut before = Vec::new();
    let mut after = Vec::new();
    for &lag in &a.lags.0 {
        before.push(json!({ "lag": [lag.0, lag.1], "value": autocorrelation(&field, lag)? }));
        // A constant sub-image has no defined correlation; it is reported as null.
        let values = pairs
            .inputs
            .iter()
            .map(|sub| match autocorrelation(sub, lag) {
                Ok(v) => Ok(Some(v)),
                Err(ImageError::DegenerateField) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<std::result::Result<Vec<Option<f64>>, _>>()?;
        let defined = values.iter().flatten();
        let max = defined.clone().copied().fold(f64::NEG_INFINITY, f64::max);
        let max_abs = defined.fold(0.0f64, |m, v| m.max(v.abs()));
        let max = if max.is_finite() { json!(max) } else { Value::Null };
        after.push(json!({ "lag": [lag.0, lag.1], "values": values, "max": max, "max_abs": max_abs }));
    }

    print_json(&json!({
        "input": a.input.display().to_string(),
        "field": source,
        "channels": c,
        "height": ch,
        "width": cw,
        "s": a.s,
        "t": a.t,
        "n": a.n,
        "strategy": a.strategy.name(),
        "seed": a.seed,
        "before": before,
        "after": after,
        "counts": {
            "pairs": count_pairs(a.s, a.t, a.n)?,
            "random_pd": big(&count_random_pd(ch, cw, a.s)?),
            "distribute_variants": big(&count_distribute_variants(ch, cw, a.s, a.t)?),
        },
    }));
    Ok(())
}

pub fn experiment(a: ExperimentArgs) -> Result<()> {
    let (train_set, held) = split(load_dataset(&a.data)?, a.holdout)?;
    if held.is_empty() {
        return Err(Failure::new(Class::Usage, "experiment needs --holdout of at least 1"));
    }
    let images: Vec<Image> = train_set.into_iter().map(|s| s.noisy).collect();
    let eval: Vec<EvalImage> = held
        .into_iter()
        .map(|s| EvalImage {
            noisy: s.noisy,
            clean: s.clean,
        })
        .collect();
    let base = config_from(&a.flags, 0);
    let mut cells = Vec::new();
    for value in &a.values {
        for &seed in &a.seeds {
            let config = apply_axis(&base, a.axis, value, seed)?;
            config.validate()?;
            let (cell, _) = run_cell(value, &images, &eval, &config, a.flags.base)?;
            eprintln!(
                "{}={value} seed={seed}: psnr {:.3} dB (noisy {:.3}), ssim {:.4}, {:.1} s",
                a.axis, cell.psnr, cell.noisy_psnr, cell.ssim, cell.wall_time_secs
            );
            cells.push(cell);
        }
    }
    write_file(&a.out, &experiment_csv(&cells))?;
    let means: Vec<Value> = mean_psnr_by_value(&cells)
        .into_iter()
        .map(|(v, m)| json!({ "value": v, "mean_psnr": m }))
        .collect();
    print_json(&json!({
        "axis": a.axis.to_string(),
        "csv": a.out.display().to_string(),
        "rows": cells.len(),
        "mean_psnr": means,
    }));
    Ok(())
}
