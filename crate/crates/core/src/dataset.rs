//! Synthetic noisy/clean datasets and their on-disk manifest.
//!
//! Clean images are synthesized at `hr_factor×` the requested size and
//! box-downsampled, so every sample also carries a high-resolution reference
//! for super-resolution checks. Noise is added at the working resolution.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::imaging::{add_correlated_noise, load_image, save_image, synth_clean, CleanKind, Image, ImageError, NoiseKernel, NoiseModel};
use crate::pairing::{pd_average, PairingError};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("invalid dataset request: {0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad manifest {path}: {source}")]
    Manifest {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Pairing(#[from] PairingError),
}

type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub kinds: Vec<CleanKind>,
    pub sigma: f64,
    /// Name understood by `NoiseKernel::from_str` (`identity`, `box3`, `box5`).
    pub kernel: String,
    pub seed: u64,
    pub hr_factor: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            count: 10,
            height: 128,
            width: 128,
            kinds: vec![CleanKind::Blobs, CleanKind::Checker, CleanKind::Bars],
            sigma: 25.0 / 255.0,
            kernel: "box3".into(),
            seed: 0,
            hr_factor: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub kind: CleanKind,
    pub seed: u64,
    pub clean_hr: Image,
    pub clean: Image,
    pub noisy: Image,
}

/// Seeds for sample `index`: (texture, noise).
fn sample_seeds(seed: u64, index: usize) -> (u64, u64) {
    let base = seed.wrapping_mul(1_000_003).wrapping_add(index as u64 * 2);
    (base, base + 1)
}

pub fn synthesize(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    if spec.kinds.is_empty() {
        return Err(DatasetError::Invalid("no image kinds given".into()));
    }
    if spec.hr_factor == 0 || !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(DatasetError::Invalid(format!(
            "need hr_factor >= 1 and sigma >= 0, got {} and {}",
            spec.hr_factor, spec.sigma
        )));
    }
    let kernel: NoiseKernel = spec.kernel.parse()?;
    (0..spec.count)
        .map(|i| {
            let kind = spec.kinds[i % spec.kinds.len()];
            let (texture_seed, noise_seed) = sample_seeds(spec.seed, i);
            let f = spec.hr_factor;
            let clean_hr = synth_clean(kind, spec.height * f, spec.width * f, texture_seed)?;
            let clean = pd_average(&clean_hr, f)?;
            let noisy = add_correlated_noise(
                &clean,
                &NoiseModel {
                    sigma: spec.sigma,
                    kernel: kernel.clone(),
                    seed: noise_seed,
                },
            );
            Ok(Sample {
                kind,
                seed: texture_seed,
                clean_hr,
                clean,
                noisy,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clean: String,
    pub noisy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_hr: Option<String>,
    pub kind: CleanKind,
    pub sigma: f64,
    pub kernel: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub images: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `clean/`, `noisy/`, `clean_hr/` and `manifest.json` under `dir`.
/// Quantization happens here: the saved noisy images are what training sees.
pub fn write_dataset(dir: &Path, spec: &DatasetSpec) -> Result<Manifest> {
    let samples = synthesize(spec)?;
    for sub in ["clean", "noisy", "clean_hr"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    let mut images = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let ext = if s.clean.channels() == 1 { "pgm" } else { "ppm" };
        let name = format!("{i:04}_{}.{ext}", s.kind);
        let entry = ManifestEntry {
            clean: format!("clean/{name}"),
            noisy: format!("noisy/{name}"),
            clean_hr: Some(format!("clean_hr/{name}")),
            kind: s.kind,
            sigma: spec.sigma,
            kernel: spec.kernel.clone(),
            seed: s.seed,
        };
        save_image(&s.clean, dir.join(&entry.clean))?;
        save_image(&s.noisy, dir.join(&entry.noisy))?;
        save_image(&s.clean_hr, dir.join(entry.clean_hr.as_ref().expect("set above")))?;
        images.push(entry);
    }
    let manifest = Manifest { images };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub entry: ManifestEntry,
    pub clean: Image,
    pub noisy: Image,
    pub clean_hr: Option<Image>,
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|source| DatasetError::Manifest {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_dataset(dir: &Path) -> Result<Vec<LoadedSample>> {
    let manifest = read_manifest(dir)?;
    manifest
        .images
        .into_iter()
        .map(|entry| {
            let clean = load_image(dir.join(&entry.clean))?;
            let noisy = load_image(dir.join(&entry.noisy))?;
            let clean_hr = match &entry.clean_hr {
                Some(p) => Some(load_image(dir.join(p))?),
                None => None,
            };
            Ok(LoadedSample {
                entry,
                clean,
                noisy,
                clean_hr,
            })
        })
        .collect()
}

/// All regular files under `dir`, sorted, relative to `dir`.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
            let path = entry.map_err(io_err(dir))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                out.push(path.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}
