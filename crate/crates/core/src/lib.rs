//! Self-supervised denoising by next-scale prediction.
//!
//! A blind-spot network is trained to map heavily pixel-shuffled (and hence
//! noise-decorrelated) sub-images of a single noisy image to higher-scale
//! targets built from *different* pixels of the same image. At test time the
//! image is pixel-shuffled by the smaller factor `t`, every sub-image is
//! predicted back at full resolution, and the predictions are averaged
//! (denoising) or interleaved (`t×` super-resolution).
//!
//! Modules, bottom-up:
//! - [`tensor`]: float-64 tensors, reverse-mode autodiff, Adam.
//! - [`imaging`]: images, PGM/PPM, synthetic content and noise, metrics.
//! - [`pairing`]: pixel-shuffle operators and cross-scale pair construction.
//! - [`bsn`]: the blind-spot network and its checkpoint format.
//! - [`train`]: the training loop.
//! - [`pipeline`]: denoising and super-resolution inference.
//! - [`dataset`], [`experiment`]: synthetic datasets and trend experiments.

pub mod bsn;
pub mod dataset;
pub mod experiment;
pub mod imaging;
pub mod pairing;
pub mod pipeline;
pub mod tensor;
pub mod train;

pub use bsn::BsnModel;
pub use imaging::Image;
pub use pairing::{PairSet, Strategy};
pub use tensor::Tensor;
pub use train::{RunReport, TrainConfig};
