//! Test-time inference: pixel-shuffle the input by `t`, run every sub-image
//! through the network to full resolution, then either average the `t²`
//! outputs (denoising) or interleave them (`t×` super-resolution).

use crate::bsn::{BsnError, BsnModel};
use crate::imaging::{Image, ImageError};
use crate::pairing::{pd_split, pu_merge, PairingError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("model expects {model} channels, image has {image}")]
    Channels { model: usize, image: usize },
    #[error("image {height}x{width} too small to pad to a multiple of {factor}")]
    TooSmall { height: usize, width: usize, factor: usize },
    #[error(transparent)]
    Model(#[from] BsnError),
    #[error(transparent)]
    Pairing(#[from] PairingError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

type Result<T> = std::result::Result<T, PipelineError>;

/// A network mapping `[C, h, w]` to `[C, scale·h, scale·w]`.
pub trait ScalePredictor {
    fn scale(&self) -> usize;
    fn channels(&self) -> usize;
    fn predict_image(&self, input: &Image) -> Result<Image>;
}

impl ScalePredictor for BsnModel {
    fn scale(&self) -> usize {
        BsnModel::scale(self)
    }

    fn channels(&self) -> usize {
        BsnModel::channels(self)
    }

    fn predict_image(&self, input: &Image) -> Result<Image> {
        Ok(BsnModel::predict_image(self, input)?)
    }
}

/// Mirror index without repeating the edge sample.
fn reflect(p: usize, len: usize) -> usize {
    if p < len {
        p
    } else {
        2 * (len - 1) - p
    }
}

/// Extends the bottom and right borders by reflection so both dimensions are
/// multiples of `factor`.
pub fn reflect_pad(image: &Image, factor: usize) -> Result<Image> {
    let (c, h, w) = image.dims();
    let (ph, pw) = (h.div_ceil(factor) * factor, w.div_ceil(factor) * factor);
    if (ph, pw) == (h, w) {
        return Ok(image.clone());
    }
    if ph - h >= h || pw - w >= w {
        return Err(PipelineError::TooSmall {
            height: h,
            width: w,
            factor,
        });
    }
    let mut out = Image::filled(c, ph, pw, 0.0);
    for ch in 0..c {
        for y in 0..ph {
            for x in 0..pw {
                out.set(ch, y, x, image.get(ch, reflect(y, h), reflect(x, w)));
            }
        }
    }
    Ok(out)
}

/// The `t²` full-resolution outputs of one test image, before reduction.
#[derive(Debug, Clone)]
pub struct SubImageOutputs {
    pub scale: usize,
    /// Unpadded input size.
    pub height: usize,
    pub width: usize,
    /// In pixel-shuffle order `a·t + b`; each is `C × H_pad × W_pad`.
    pub outputs: Vec<Image>,
}

impl SubImageOutputs {
    /// Elementwise mean, summed in fixed order then divided. Padded size,
    /// unclamped.
    pub fn average(&self) -> Image {
        average_images(&self.outputs)
    }

    /// Pixel-shuffle reassembly at `t×` the padded size, unclamped.
    pub fn merge(&self) -> Result<Image> {
        Ok(pu_merge(&self.outputs, self.scale)?)
    }
}

pub(crate) fn average_images(images: &[Image]) -> Image {
    let (c, h, w) = images[0].dims();
    let mut acc = vec![0.0; c * h * w];
    for img in images {
        acc.iter_mut().zip(img.pixels()).for_each(|(a, v)| *a += v);
    }
    let n = images.len() as f64;
    Image::new(c, h, w, acc.into_iter().map(|v| v / n).collect()).expect("same shape")
}

fn check_channels(model: &impl ScalePredictor, image: &Image) -> Result<()> {
    if model.channels() != image.channels() {
        return Err(PipelineError::Channels {
            model: model.channels(),
            image: image.channels(),
        });
    }
    Ok(())
}

/// Pads, splits by `t` and runs each sub-image through the model.
pub fn subimage_outputs(model: &impl ScalePredictor, noisy: &Image) -> Result<SubImageOutputs> {
    check_channels(model, noisy)?;
    let t = model.scale();
    let padded = reflect_pad(noisy, t)?;
    let outputs = pd_split(&padded, t)?
        .iter()
        .map(|sub| model.predict_image(sub))
        .collect::<Result<Vec<_>>>()?;
    Ok(SubImageOutputs {
        scale: t,
        height: noisy.height(),
        width: noisy.width(),
        outputs,
    })
}

/// Same-size denoised image.
pub fn denoise(model: &impl ScalePredictor, noisy: &Image) -> Result<Image> {
    let outs = subimage_outputs(model, noisy)?;
    Ok(outs.average().crop(0, 0, outs.height, outs.width)?.clamped())
}

/// `t×` super-resolved image from the same sub-image outputs as [`denoise`].
pub fn super_resolve(model: &impl ScalePredictor, noisy: &Image) -> Result<Image> {
    let outs = subimage_outputs(model, noisy)?;
    let t = outs.scale;
    Ok(outs.merge()?.crop(0, 0, t * outs.height, t * outs.width)?.clamped())
}

/// `t×` output from a single forward pass over the whole image.
pub fn super_resolve_direct(model: &impl ScalePredictor, noisy: &Image) -> Result<Image> {
    check_channels(model, noisy)?;
    Ok(model.predict_image(noisy)?.clamped())
}

/// Nearest-neighbour `factor×` enlargement.
pub fn upsample_nearest(image: &Image, factor: usize) -> Image {
    let (c, h, w) = image.dims();
    let mut out = Image::filled(c, h * factor, w * factor, 0.0);
    for ch in 0..c {
        for y in 0..h * factor {
            for x in 0..w * factor {
                out.set(ch, y, x, image.get(ch, y / factor, x / factor));
            }
        }
    }
    out
}
