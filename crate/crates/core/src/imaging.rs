//! Image container, binary PGM/PPM I/O, synthetic test content, correlated
//! noise and quality metrics.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("unsupported maxval {0} (only 255 is supported)")]
    UnsupportedMaxval(u32),
    #[error("unsupported channel count {0}")]
    Channels(usize),
    #[error("shape mismatch: {0} vs {1}")]
    ShapeMismatch(String, String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("correlation undefined for a zero-variance field")]
    DegenerateField,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T> = std::result::Result<T, ImageError>;

/// Planar `channels × height × width` raster. Values are nominally in
/// `[0, 1]`; only file I/O enforces the range.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<f64>) -> Result<Image> {
        if pixels.len() != channels * height * width {
            return Err(ImageError::ShapeMismatch(
                format!("{channels}x{height}x{width}"),
                format!("{} pixels", pixels.len()),
            ));
        }
        Ok(Image {
            channels,
            height,
            width,
            pixels,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Image {
        Image {
            channels,
            height,
            width,
            pixels: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f64) {
        self.pixels[(c * self.height + y) * self.width + x] = value;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.pixels[c * n..(c + 1) * n]
    }

    pub fn clamped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Image) -> Result<Image> {
        same_shape(self, other)?;
        Ok(Image {
            pixels: self.pixels.iter().zip(&other.pixels).map(|(a, b)| a - b).collect(),
            ..*self
        })
    }

    /// Sub-rectangle `[y, y+h) × [x, x+w)` of every channel.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Image> {
        if y + h > self.height || x + w > self.width {
            return Err(ImageError::Invalid(format!(
                "crop {h}x{w}+{y}+{x} exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            for row in y..y + h {
                let start = (c * self.height + row) * self.width + x;
                pixels.extend_from_slice(&self.pixels[start..start + w]);
            }
        }
        Image::new(self.channels, h, w, pixels)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.channels, self.height, self.width], self.pixels.clone())
            .expect("image buffer matches its shape")
    }

    pub fn from_tensor(tensor: &Tensor) -> Result<Image> {
        match tensor.shape() {
            &[c, h, w] => Image::new(c, h, w, tensor.data().to_vec()),
            other => Err(ImageError::Invalid(format!("expected [C,H,W] tensor, got {other:?}"))),
        }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len().max(1) as f64
    }

    pub fn std_dev(&self) -> f64 {
        let mean = self.mean();
        let var = self.pixels.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / self.pixels.len().max(1) as f64;
        var.sqrt()
    }
}

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(ImageError::ShapeMismatch(format!("{:?}", a.dims()), format!("{:?}", b.dims())));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// PGM / PPM
// ---------------------------------------------------------------------------

/// Parses a binary P5 (grayscale) or P6 (RGB) image with maxval 255.
pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(ImageError::Header(format!("unsupported magic {other:?}"))),
    };
    let width = parse_field(bytes, &mut pos, "width")?;
    let height = parse_field(bytes, &mut pos, "height")?;
    let maxval = parse_field(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(ImageError::UnsupportedMaxval(maxval as u32));
    }
    if width == 0 || height == 0 {
        return Err(ImageError::Header("zero image dimension".into()));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(ImageError::Header("missing whitespace after maxval".into())),
    }
    let expected = channels * width * height;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(ImageError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let mut pixels = vec![0.0; expected];
    let plane = width * height;
    for (idx, &byte) in payload[..expected].iter().enumerate() {
        let (p, c) = (idx / channels, idx % channels);
        pixels[c * plane + p] = f64::from(byte) / 255.0;
    }
    Image::new(channels, height, width, pixels)
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(ImageError::Header("unexpected end of header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn parse_field(bytes: &[u8], pos: &mut usize, name: &str) -> Result<usize> {
    let token = next_token(bytes, pos)?;
    token
        .parse()
        .map_err(|_| ImageError::Header(format!("bad {name} {token:?}")))
}

/// Encodes with a canonical `P5\n<w> <h>\n255\n` header; values are clamped
/// to `[0, 1]` and rounded to the nearest byte.
pub fn encode_pnm(image: &Image) -> Result<Vec<u8>> {
    let magic = match image.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(ImageError::Channels(c)),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    let plane = image.width * image.height;
    out.reserve(plane * image.channels);
    for p in 0..plane {
        for c in 0..image.channels {
            out.push(quantize(image.pixels[c * plane + p]));
        }
    }
    Ok(out)
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_pnm(&bytes)
}

pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pnm(image)?;
    std::fs::write(path, bytes).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Synthetic clean content
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CleanKind {
    Gradient,
    Checker,
    Bars,
    Blobs,
}

impl CleanKind {
    pub const ALL: [CleanKind; 4] = [CleanKind::Gradient, CleanKind::Checker, CleanKind::Bars, CleanKind::Blobs];

    pub fn name(self) -> &'static str {
        match self {
            CleanKind::Gradient => "gradient",
            CleanKind::Checker => "checker",
            CleanKind::Bars => "bars",
            CleanKind::Blobs => "blobs",
        }
    }
}

impl fmt::Display for CleanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CleanKind {
    type Err = ImageError;

    fn from_str(s: &str) -> Result<Self> {
        CleanKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| ImageError::Invalid(format!("unknown image kind {s:?}")))
    }
}

const MIN_TEXTURE_SIZE: usize = 16;

/// Deterministic single-channel procedural texture.
///
/// `Checker` and `Bars` both contain a region of period-2 structure next to
/// coarser patterns. `Gradient` is a plain ramp `(i·w + j) / (h·w − 1)` and
/// accepts any size with at least two pixels.
pub fn synth_clean(kind: CleanKind, height: usize, width: usize, seed: u64) -> Result<Image> {
    let min = if kind == CleanKind::Gradient { 1 } else { MIN_TEXTURE_SIZE };
    if height < min || width < min || height * width < 2 {
        return Err(ImageError::Invalid(format!(
            "{kind} texture needs at least {min}x{min} pixels, got {height}x{width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::filled(1, height, width, 0.0);
    match kind {
        CleanKind::Gradient => {
            let denom = (height * width - 1) as f64;
            for i in 0..height {
                for j in 0..width {
                    img.set(0, i, j, (i * width + j) as f64 / denom);
                }
            }
        }
        CleanKind::Checker => {
            let lo = rng.random_range(0.1..0.3);
            let hi = rng.random_range(0.7..0.9);
            let mut cells = [1usize, 8, 2, 4];
            let rot = rng.random_range(0..cells.len());
            cells.rotate_left(rot);
            let phase = rng.random_range(0..16usize);
            let band = height.div_ceil(cells.len());
            for i in 0..height {
                let cell = cells[i / band];
                for j in 0..width {
                    let on = ((i + phase) / cell + (j + phase) / cell) % 2 == 0;
                    img.set(0, i, j, if on { hi } else { lo });
                }
            }
        }
        CleanKind::Bars => {
            let fine_lo = rng.random_range(0.15..0.35);
            let fine_hi = rng.random_range(0.65..0.85);
            let fine_cols = width / 4;
            let mut column_values = Vec::with_capacity(width);
            for j in 0..fine_cols {
                column_values.push(if j % 2 == 0 { fine_lo } else { fine_hi });
            }
            const WIDTHS: [usize; 6] = [1, 2, 3, 5, 8, 13];
            while column_values.len() < width {
                let bar = WIDTHS[rng.random_range(0..WIDTHS.len())];
                let value = rng.random_range(0.1..0.9);
                for _ in 0..bar.min(width - column_values.len()) {
                    column_values.push(value);
                }
            }
            for i in 0..height {
                for (j, &v) in column_values.iter().enumerate() {
                    img.set(0, i, j, v);
                }
            }
        }
        CleanKind::Blobs => {
            let background = rng.random_range(0.25..0.45);
            let count = rng.random_range(6..=10);
            let scale = height.min(width) as f64;
            let blobs: Vec<(f64, f64, f64, f64)> = (0..count)
                .map(|_| {
                    let cy = rng.random_range(0.0..height as f64);
                    let cx = rng.random_range(0.0..width as f64);
                    let radius = rng.random_range(scale / 16.0..scale / 4.0);
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    let amp = sign * rng.random_range(0.2..0.5);
                    (cy, cx, radius, amp)
                })
                .collect();
            for i in 0..height {
                for j in 0..width {
                    let mut v = background;
                    for &(cy, cx, r, amp) in &blobs {
                        let d2 = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2);
                        v += amp * (-d2 / (2.0 * r * r)).exp();
                    }
                    img.set(0, i, j, v.clamp(0.0, 1.0));
                }
            }
        }
    }
    Ok(img)
}

// ---------------------------------------------------------------------------
// Correlated noise
// ---------------------------------------------------------------------------

/// Normalized non-negative square correlation kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseKernel {
    size: usize,
    weights: Vec<f64>,
}

impl NoiseKernel {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<NoiseKernel> {
        if size % 2 == 0 || weights.len() != size * size {
            return Err(ImageError::Invalid(format!("kernel must be odd-sized square, got size {size}")));
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(ImageError::Invalid("kernel weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(ImageError::Invalid("kernel weights sum to zero".into()));
        }
        Ok(NoiseKernel {
            size,
            weights: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn identity() -> NoiseKernel {
        NoiseKernel {
            size: 1,
            weights: vec![1.0],
        }
    }

    pub fn boxed(size: usize) -> Result<NoiseKernel> {
        NoiseKernel::new(size, vec![1.0; size * size])
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Gain that restores unit marginal variance after filtering white noise.
    fn gain(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

impl FromStr for NoiseKernel {
    type Err = ImageError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(NoiseKernel::identity()),
            "box3" => NoiseKernel::boxed(3),
            "box5" => NoiseKernel::boxed(5),
            other => Err(ImageError::Invalid(format!("unknown kernel {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub sigma: f64,
    pub kernel: NoiseKernel,
    pub seed: u64,
}

/// Filtered Gaussian field with marginal standard deviation `sigma`.
pub fn correlated_field(channels: usize, height: usize, width: usize, model: &NoiseModel) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let k = model.kernel.size;
    let r = k / 2;
    let (ph, pw) = (height + 2 * r, width + 2 * r);
    let amplitude = model.sigma * model.kernel.gain();
    let mut field = Image::filled(channels, height, width, 0.0);
    for c in 0..channels {
        let white: Vec<f64> = (0..ph * pw).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for y in 0..height {
            for x in 0..width {
                let mut acc = 0.0;
                for ky in 0..k {
                    let row = &white[(y + ky) * pw + x..][..k];
                    let kw = &model.kernel.weights[ky * k..][..k];
                    acc += row.iter().zip(kw).map(|(a, b)| a * b).sum::<f64>();
                }
                field.set(c, y, x, acc * amplitude);
            }
        }
    }
    field
}

/// `clamp(clean + field, 0, 1)` with `field` from [`correlated_field`].
pub fn add_correlated_noise(clean: &Image, model: &NoiseModel) -> Image {
    if model.sigma == 0.0 {
        return clean.clone();
    }
    let field = correlated_field(clean.channels, clean.height, clean.width, model);
    Image {
        pixels: clean
            .pixels
            .iter()
            .zip(&field.pixels)
            .map(|(c, n)| (c + n).clamp(0.0, 1.0))
            .collect(),
        ..*clean
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.pixels.len().max(1) as f64;
    Ok(a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// Peak signal-to-noise ratio in dB for unit peak; `+inf` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / err).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps used by [`ssim`].
pub fn ssim_taps() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Mean structural similarity over every full 11×11 Gaussian window (σ = 1.5)
/// of every channel, data range 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(ImageError::Invalid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels"
        )));
    }
    let taps = ssim_taps();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (h, w) = (a.height, a.width);
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..a.channels {
        let x = a.plane(c);
        let y = b.plane(c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(x, h, w, &taps);
        let my = filter_valid(y, h, w, &taps);
        let mxx = filter_valid(&xx, h, w, &taps);
        let myy = filter_valid(&yy, h, w, &taps);
        let mxy = filter_valid(&xy, h, w, &taps);
        for i in 0..mx.len() {
            let vx = mxx[i] - mx[i] * mx[i];
            let vy = myy[i] - my[i] * my[i];
            let cov = mxy[i] - mx[i] * my[i];
            let num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
            let den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
            total += num / den;
        }
        count += mx.len();
    }
    Ok(total / count as f64)
}

/// Separable valid-mode filtering of a single plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&plane[y * w + x..]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Pearson correlation between `field(i, j)` and `field(i+dy, j+dx)` over the
/// overlapping region, averaged over channels.
pub fn autocorrelation(field: &Image, lag: (isize, isize)) -> Result<f64> {
    let (dy, dx) = lag;
    let (h, w) = (field.height as isize, field.width as isize);
    if dy.abs() >= h || dx.abs() >= w {
        return Err(ImageError::Invalid(format!("lag {lag:?} out of range for {h}x{w}")));
    }
    let ys = (-dy).max(0)..(h - dy).min(h);
    let xs = (-dx).max(0)..(w - dx).min(w);
    let mut total = 0.0;
    for c in 0..field.channels {
        let plane = field.plane(c);
        let at = |y: isize, x: isize| plane[(y * w + x) as usize];
        let n = (ys.len() * xs.len()) as f64;
        let (mut sa, mut sb) = (0.0, 0.0);
        let (mut a_varies, mut b_varies) = (false, false);
        let (a0, b0) = (at(ys.start, xs.start), at(ys.start + dy, xs.start + dx));
        for y in ys.clone() {
            for x in xs.clone() {
                let (a, b) = (at(y, x), at(y + dy, x + dx));
                a_varies |= a != a0;
                b_varies |= b != b0;
                sa += a;
                sb += b;
            }
        }
        if !a_varies || !b_varies {
            return Err(ImageError::DegenerateField);
        }
        let (ma, mb) = (sa / n, sb / n);
        let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
        for y in ys.clone() {
            for x in xs.clone() {
                let a = at(y, x) - ma;
                let b = at(y + dy, x + dx) - mb;
                cov += a * b;
                va += a * a;
                vb += b * b;
            }
        }
        if va == 0.0 || vb == 0.0 {
            return Err(ImageError::DegenerateField);
        }
        total += cov / (va * vb).sqrt();
    }
    Ok(total / field.channels as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_p5_payload() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 128, 255, 64]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.dims(), (1, 2, 2));
        assert_eq!(img.pixels(), &[0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0]);
        assert_eq!(encode_pnm(&img).unwrap(), bytes);
    }

    #[test]
    fn p6_is_interleaved_on_disk() {
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend([1u8, 2, 3, 4, 5, 6]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.dims(), (3, 1, 2));
        assert_eq!(img.get(0, 0, 1), 4.0 / 255.0);
        assert_eq!(img.get(2, 0, 0), 3.0 / 255.0);
        assert_eq!(encode_pnm(&img).unwrap(), bytes);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5 # a comment\n1 1\n255\n".to_vec();
        bytes.push(7);
        assert_eq!(decode_pnm(&bytes).unwrap().pixels(), &[7.0 / 255.0]);
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(decode_pnm(b"P2\n1 1\n255\n\0"), Err(ImageError::Header(_))));
        assert!(matches!(decode_pnm(b"P5\n1 1\n65535\n\0\0"), Err(ImageError::UnsupportedMaxval(65535))));
        assert!(matches!(
            decode_pnm(b"P5\n2 2\n255\n\0\0"),
            Err(ImageError::Truncated { expected: 4, found: 2 })
        ));
        assert!(matches!(decode_pnm(b"P5\n2 x\n255\n"), Err(ImageError::Header(_))));
        assert!(matches!(decode_pnm(b"P5\n2"), Err(ImageError::Header(_))));
    }

    #[test]
    fn out_of_range_is_clamped_on_save() {
        let img = Image::new(1, 1, 2, vec![1.7, -0.2]).unwrap();
        let back = decode_pnm(&encode_pnm(&img).unwrap()).unwrap();
        assert_eq!(back.pixels(), &[1.0, 0.0]);
    }

    #[test]
    fn gradient_definition() {
        let img = synth_clean(CleanKind::Gradient, 4, 4, 0).unwrap();
        assert_eq!(img.get(0, 0, 0), 0.0);
        assert_eq!(img.get(0, 3, 3), 1.0);
        assert_eq!(img.get(0, 1, 2), 6.0 / 15.0);
    }

    #[test]
    fn checker_is_two_valued_with_fine_period() {
        for seed in 0..5 {
            let img = synth_clean(CleanKind::Checker, 64, 48, seed).unwrap();
            let mut values: Vec<f64> = img.pixels().to_vec();
            values.sort_by(f64::total_cmp);
            values.dedup();
            assert_eq!(values.len(), 2);
            let has_period_two = (0..63).any(|i| (0..46).all(|j| img.get(0, i, j) == img.get(0, i, j + 2) && img.get(0, i, j) != img.get(0, i, j + 1)));
            assert!(has_period_two);
        }
    }

    #[test]
    fn bars_have_fine_period() {
        let img = synth_clean(CleanKind::Bars, 32, 64, 3).unwrap();
        for j in 0..14 {
            assert_eq!(img.get(0, 5, j), img.get(0, 5, j + 2));
            assert_ne!(img.get(0, 5, j), img.get(0, 5, j + 1));
        }
    }

    #[test]
    fn synth_is_deterministic_and_in_range() {
        for kind in CleanKind::ALL {
            let a = synth_clean(kind, 40, 36, 11).unwrap();
            let b = synth_clean(kind, 40, 36, 11).unwrap();
            assert_eq!(a, b);
            assert!(a.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(synth_clean(CleanKind::Blobs, 8, 32, 0).is_err());
    }

    #[test]
    fn zero_sigma_is_identity() {
        let clean = synth_clean(CleanKind::Blobs, 32, 32, 1).unwrap();
        let model = NoiseModel {
            sigma: 0.0,
            kernel: NoiseKernel::boxed(3).unwrap(),
            seed: 4,
        };
        assert_eq!(add_correlated_noise(&clean, &model), clean);
    }

    #[test]
    fn kernel_validation() {
        assert!(NoiseKernel::new(2, vec![1.0; 4]).is_err());
        assert!(NoiseKernel::new(3, vec![-1.0; 9]).is_err());
        let k = NoiseKernel::new(3, vec![2.0; 9]).unwrap();
        assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!("box5".parse::<NoiseKernel>().unwrap().size(), 5);
    }

    #[test]
    fn psnr_values() {
        let a = Image::filled(1, 16, 16, 0.5);
        let b = Image::filled(1, 16, 16, 0.6);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &Image::filled(1, 16, 15, 0.5)).is_err());
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn autocorrelation_lag_zero_and_errors() {
        let img = synth_clean(CleanKind::Blobs, 32, 32, 2).unwrap();
        assert!((autocorrelation(&img, (0, 0)).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            autocorrelation(&Image::filled(1, 8, 8, 0.3), (0, 1)),
            Err(ImageError::DegenerateField)
        ));
        assert!(autocorrelation(&img, (0, 32)).is_err());
    }
}
