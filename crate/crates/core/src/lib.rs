//! Spatial autoregressive density estimation over patch-embedding grids.
//!
//! A stack of masked, optionally dilated convolutions predicts, for every grid
//! position, the mean of a unit-variance Gaussian over that position's
//! embedding given only the positions before it in raster order. The
//! per-position negative log-likelihood is the anomaly score, and the whole
//! map comes out of one forward pass.
//!
//! Modules, bottom-up:
//!
//! - [`tensor`]: NCHW grids and same-padded dilated convolution with exact
//!   backward.
//! - [`mask`]: kernel masks for the raster-scan factorization.
//! - [`model`] and [`checkpoint`]: the masked stack and its binary format.
//! - [`nll`]: Gaussian NLL, training loss and anomaly maps.
//! - [`optim`] and [`train`]: AdamW and the training loop.
//! - [`metrics`]: AUROC, average precision, bilinear upsampling.
//! - [`synth`]: synthetic correlated grids with injected anomalies.
//! - [`io`]: FGRD / AMSK / AMAP / PGM files.
//! - [`oracle`] and [`verify`]: slow reference paths and the self-check suite.
//! - [`cli`]: the command implementations behind the `spatial-ar` binary.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod nll;
pub mod optim;
pub mod oracle;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use mask::{build_mask, KernelMask, MaskKind, RasterOrder};
pub use model::{Activation, ArModel, LayerSpec, ModelConfig, Variant};
pub use nll::{score_image, AnomalyMap};
pub use tensor::{conv2d_backward, conv2d_forward, ConvWeights, Element, Grid4};
