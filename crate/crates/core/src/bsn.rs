//! Blind-spot network with a tail pixel shuffle.
//!
//! Architecture for `C` image channels, `B` base channels and scale `t`:
//!
//! ```text
//! conv3x3 masked  C -> B, relu
//! conv3x3 masked dilation 2  B -> B, relu   (x3)
//! conv1x1  B -> B·t², relu
//! pixel_shuffle(t)
//! conv1x1  B -> B, relu
//! conv1x1  B -> C
//! ```
//!
//! The first masked conv only reaches offsets with at least one odd
//! coordinate; dilation-2 layers add even offsets, so no path ever returns to
//! the center pixel. Everything after the 3x3 stack is pointwise in the low
//! resolution grid, hence output block `(t·i + a, t·j + b)` never depends on
//! input pixel `(i, j)`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::imaging::{Image, ImageError};
use crate::tensor::{self, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum BsnError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("input {input:?} incompatible with model: {reason}")]
    Input { input: Vec<usize>, reason: String },
    #[error("pixel {pixel:?} lies outside the {height}x{width} input")]
    PixelOutOfBounds {
        pixel: (usize, usize),
        height: usize,
        width: usize,
    },
    #[error("checkpoint i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0} (expected {CHECKPOINT_VERSION})")]
    Version(u32),
    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("checkpoint truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

type Result<T> = std::result::Result<T, BsnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Conv {
        c_in: usize,
        c_out: usize,
        k: usize,
        dilation: usize,
        masked: bool,
    },
    Relu,
    PixelShuffle {
        factor: usize,
    },
}

pub const DEFAULT_BASE_CHANNELS: usize = 32;
pub const MIN_BASE_CHANNELS: usize = 8;

#[derive(Debug, Clone)]
pub struct BsnModel {
    channels: usize,
    t: usize,
    base_channels: usize,
    layers: Vec<Layer>,
    params: Vec<Tensor>,
}

fn layer_plan(channels: usize, t: usize, base: usize, masked: bool) -> Vec<Layer> {
    let conv = |c_in, c_out, k, dilation, masked| Layer::Conv {
        c_in,
        c_out,
        k,
        dilation,
        masked,
    };
    let mut layers = vec![conv(channels, base, 3, 1, masked), Layer::Relu];
    for _ in 0..3 {
        layers.push(conv(base, base, 3, 2, masked));
        layers.push(Layer::Relu);
    }
    layers.extend([
        conv(base, base * t * t, 1, 1, false),
        Layer::Relu,
        Layer::PixelShuffle { factor: t },
        conv(base, base, 1, 1, false),
        Layer::Relu,
        conv(base, channels, 1, 1, false),
    ]);
    layers
}

/// Stored parameter count (weights including masked taps, plus biases).
pub fn param_count(channels: usize, t: usize, base: usize) -> usize {
    let head = base * channels * 9 + base;
    let body = 3 * (base * base * 9 + base);
    let expand = base * base * t * t + base * t * t;
    let tail = (base * base + base) + (channels * base + channels);
    head + body + expand + tail
}

impl BsnModel {
    /// Blind-spot network with He-initialized weights and zero biases.
    pub fn build(channels: usize, t: usize, base_channels: usize, seed: u64) -> Result<BsnModel> {
        Self::build_with_mask(channels, t, base_channels, seed, true)
    }

    /// Same architecture without center masks; not blind. Negative control
    /// for [`verify_blind_spot`].
    pub fn build_unmasked(channels: usize, t: usize, base_channels: usize, seed: u64) -> Result<BsnModel> {
        Self::build_with_mask(channels, t, base_channels, seed, false)
    }

    fn build_with_mask(channels: usize, t: usize, base: usize, seed: u64, masked: bool) -> Result<BsnModel> {
        if channels == 0 || t == 0 || base < MIN_BASE_CHANNELS {
            return Err(BsnError::Config(format!(
                "need channels >= 1, t >= 1, base_channels >= {MIN_BASE_CHANNELS}; got {channels}, {t}, {base}"
            )));
        }
        let layers = layer_plan(channels, t, base, masked);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for layer in &layers {
            if let Layer::Conv {
                c_in,
                c_out,
                k,
                masked,
                ..
            } = *layer
            {
                let active = if masked { k * k - 1 } else { k * k };
                let std = (2.0 / (c_in * active) as f64).sqrt();
                let w: Vec<f64> = (0..c_out * c_in * k * k)
                    .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                params.push(Tensor::param(&[c_out, c_in, k, k], w)?);
                params.push(Tensor::param(&[c_out], vec![0.0; c_out])?);
            }
        }
        Ok(BsnModel {
            channels,
            t,
            base_channels: base,
            layers,
            params,
        })
    }

    /// Unmasked scale-1 model whose forward pass is the identity on
    /// non-negative inputs. Test double for the inference plumbing.
    pub fn identity_stub(channels: usize) -> Result<BsnModel> {
        let base = MIN_BASE_CHANNELS.max(channels);
        let mut model = Self::build_unmasked(channels, 1, base, 0)?;
        let mut conv_index = 0;
        let layers = model.layers.clone();
        for layer in layers {
            if let Layer::Conv { c_in, c_out, k, .. } = layer {
                let mut w = vec![0.0; c_out * c_in * k * k];
                let center = (k / 2) * k + k / 2;
                for ch in 0..c_in.min(c_out) {
                    w[(ch * c_in + ch) * k * k + center] = 1.0;
                }
                model.params[2 * conv_index] = Tensor::param(&[c_out, c_in, k, k], w)?;
                model.params[2 * conv_index + 1] = Tensor::param(&[c_out], vec![0.0; c_out])?;
                conv_index += 1;
            }
        }
        Ok(model)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn scale(&self) -> usize {
        self.t
    }

    pub fn base_channels(&self) -> usize {
        self.base_channels
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Farthest input offset any output reads, per axis.
    pub fn receptive_radius(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match *l {
                Layer::Conv { k, dilation, .. } => (k / 2) * dilation,
                _ => 0,
            })
            .sum()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let shape = input.shape();
        let reason = if shape.len() != 3 {
            "expected [C,H,W]".to_string()
        } else if shape[0] != self.channels {
            format!("model expects {} channels", self.channels)
        } else if shape[1] < self.receptive_radius() || shape[2] < self.receptive_radius() {
            format!("spatial size below receptive radius {}", self.receptive_radius())
        } else {
            return Ok(());
        };
        Err(BsnError::Input {
            input: shape.to_vec(),
            reason,
        })
    }

    /// Differentiable forward pass `[C,h,w] -> [C,t·h,t·w]`.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.forward_with(&self.params, input)
    }

    /// Forward pass that records no gradient graph.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let frozen: Vec<Tensor> = self.params.iter().map(Tensor::detach).collect();
        self.forward_with(&frozen, &input.detach())
    }

    pub fn predict_image(&self, input: &Image) -> Result<Image> {
        Ok(Image::from_tensor(&self.predict(&input.to_tensor())?)?)
    }

    fn forward_with(&self, params: &[Tensor], input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        let mut p = params.iter();
        for layer in &self.layers {
            x = match *layer {
                Layer::Conv { dilation, masked, .. } => {
                    let (w, b) = (p.next().expect("weight"), p.next().expect("bias"));
                    tensor::conv2d(&x, w, b, dilation, masked)?
                }
                Layer::Relu => tensor::relu(&x),
                Layer::PixelShuffle { factor } => tensor::pixel_shuffle(&x, factor)?,
            };
        }
        Ok(x)
    }

    /// Copies all weights (shapes must match).
    pub fn load_params(&mut self, values: &[Vec<f64>]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(BsnError::Config(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.numel() != v.len() {
                return Err(BsnError::Config("parameter size mismatch".into()));
            }
            *p = Tensor::param(p.shape(), v.clone())?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Blind-spot verification
// ---------------------------------------------------------------------------

/// Output changes caused by perturbing a single input pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PerturbationEffect {
    /// Some pixel of the `t × t` block fed by the perturbed position changed.
    pub block_changed: bool,
    /// Some pixel outside that block changed.
    pub outside_changed: bool,
}

/// Adds `delta` to every channel of input pixel `(i, j)` and compares
/// outputs bitwise.
pub fn perturbation_effect(model: &BsnModel, input: &Tensor, pixel: (usize, usize), delta: f64) -> Result<PerturbationEffect> {
    let shape = input.shape();
    if shape.len() != 3 {
        return Err(BsnError::Input {
            input: shape.to_vec(),
            reason: "expected [C,H,W]".into(),
        });
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (i, j) = pixel;
    if i >= h || j >= w {
        return Err(BsnError::PixelOutOfBounds { pixel, height: h, width: w });
    }
    let base = model.predict(input)?;
    let mut data = input.data().to_vec();
    for ch in 0..c {
        data[(ch * h + i) * w + j] += delta;
    }
    let perturbed = model.predict(&Tensor::new(shape, data)?)?;

    let t = model.scale();
    let (oh, ow) = (h * t, w * t);
    let mut effect = PerturbationEffect {
        block_changed: false,
        outside_changed: false,
    };
    for ch in 0..model.channels() {
        for y in 0..oh {
            for x in 0..ow {
                let idx = (ch * oh + y) * ow + x;
                if base.data()[idx].to_bits() != perturbed.data()[idx].to_bits() {
                    if y / t == i && x / t == j {
                        effect.block_changed = true;
                    } else {
                        effect.outside_changed = true;
                    }
                }
            }
        }
    }
    Ok(effect)
}

/// True iff changing input pixel `(i, j)` leaves the output block
/// `{(t·i + a, t·j + b)}` bitwise unchanged.
pub fn verify_blind_spot(model: &BsnModel, input: &Tensor, pixel: (usize, usize)) -> Result<bool> {
    let effect = perturbation_effect(model, input, pixel, 1.0)?;
    Ok(!effect.block_changed)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NSPB";
pub const CHECKPOINT_VERSION: u32 = 1;

const KIND_CONV: u8 = 0;
const KIND_RELU: u8 = 1;
const KIND_SHUFFLE: u8 = 2;

/// Layout (all integers little-endian):
/// magic, version u32, channels u32, t u32, base u32, layer count u32,
/// layer table, parameter payload as f64, CRC-32 of everything before it.
pub fn encode_checkpoint(model: &BsnModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    for v in [
        CHECKPOINT_VERSION,
        model.channels as u32,
        model.t as u32,
        model.base_channels as u32,
        model.layers.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for layer in &model.layers {
        match *layer {
            Layer::Conv {
                c_in,
                c_out,
                k,
                dilation,
                masked,
            } => {
                out.push(KIND_CONV);
                for v in [c_in, c_out, k, dilation] {
                    out.extend_from_slice(&(v as u32).to_le_bytes());
                }
                out.push(masked as u8);
            }
            Layer::Relu => out.push(KIND_RELU),
            Layer::PixelShuffle { factor } => {
                out.push(KIND_SHUFFLE);
                out.extend_from_slice(&(factor as u32).to_le_bytes());
            }
        }
    }
    for p in &model.params {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(BsnError::Truncated {
                needed: self.pos + n,
                available: self.bytes.len(),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<BsnModel> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != CHECKPOINT_MAGIC {
        return Err(BsnError::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(BsnError::Version(version));
    }
    let channels = r.usize()?;
    let t = r.usize()?;
    let base = r.usize()?;
    let count = r.usize()?;
    if count > 1024 {
        return Err(BsnError::Malformed(format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        layers.push(match r.u8()? {
            KIND_CONV => Layer::Conv {
                c_in: r.usize()?,
                c_out: r.usize()?,
                k: r.usize()?,
                dilation: r.usize()?,
                masked: match r.u8()? {
                    0 => false,
                    1 => true,
                    other => return Err(BsnError::Malformed(format!("mask flag {other}"))),
                },
            },
            KIND_RELU => Layer::Relu,
            KIND_SHUFFLE => Layer::PixelShuffle { factor: r.usize()? },
            other => return Err(BsnError::Malformed(format!("unknown layer kind {other}"))),
        });
    }
    let param_shapes = validate_layers(&layers, channels, t)?;
    let total: usize = param_shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    let needed = r.pos + total * 8 + 4;
    if bytes.len() < needed {
        return Err(BsnError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(BsnError::Malformed(format!("{} trailing bytes", bytes.len() - needed)));
    }
    let stored = u32::from_le_bytes(bytes[needed - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..needed - 4]);
    if stored != computed {
        return Err(BsnError::Checksum { stored, computed });
    }
    let mut params = Vec::with_capacity(param_shapes.len());
    for shape in &param_shapes {
        let n: usize = shape.iter().product();
        let data = r
            .take(n * 8)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        params.push(Tensor::param(shape, data)?);
    }
    Ok(BsnModel {
        channels,
        t,
        base_channels: base,
        layers,
        params,
    })
}

/// Structural checks on a layer table; returns the parameter shapes.
fn validate_layers(layers: &[Layer], channels: usize, t: usize) -> Result<Vec<Vec<usize>>> {
    let mut shapes = Vec::new();
    let mut width = channels;
    let mut shuffles = 0;
    for layer in layers {
        match *layer {
            Layer::Conv {
                c_in,
                c_out,
                k,
                dilation,
                ..
            } => {
                if c_in != width || k % 2 == 0 || dilation == 0 || c_out == 0 {
                    return Err(BsnError::Malformed(format!("inconsistent conv layer {layer:?}")));
                }
                shapes.push(vec![c_out, c_in, k, k]);
                shapes.push(vec![c_out]);
                width = c_out;
            }
            Layer::Relu => {}
            Layer::PixelShuffle { factor } => {
                if factor != t || width % (t * t) != 0 {
                    return Err(BsnError::Malformed(format!("pixel shuffle {factor} on {width} channels")));
                }
                width /= t * t;
                shuffles += 1;
            }
        }
    }
    if shuffles != 1 || width != channels {
        return Err(BsnError::Malformed("layer table is not a single-shuffle C->C network".into()));
    }
    Ok(shapes)
}

pub fn save_checkpoint(model: &BsnModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model)).map_err(|source| BsnError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<BsnModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| BsnError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
