//! Reference-conditioned stochastic super-resolution.
//!
//! The pipeline upscales a low-resolution image by a factor `alpha` while
//! letting an arbitrary reference image (or a random draw from the latent
//! prior) steer the texture of the result. The crate is organised around
//! the stages of that pipeline:
//!
//! * [`imaging`] — image containers, PNG I/O, colour conversion, bicubic
//!   resampling and the synthetic degradation model,
//! * [`features`] — the frozen convolutional feature extractor with four
//!   named taps,
//! * [`cvae`] — the conditional variational core (latent grid, sampling,
//!   KL regulariser, conditional projection),
//! * [`generator`] — feature-statistics fusion, the image decoder and the
//!   four-mode `super_resolve` entry point,
//! * [`losses`] — the training objectives and the patch discriminator,
//! * [`metrics`] — PSNR/SSIM, perceptual distance, LR-consistency and the
//!   diverse score over sample sets,
//! * [`harness`] — the training loop, checkpointing and the ablation driver.
//!
//! Everything runs on `f64` so gradients can be validated against central
//! finite differences. The [`tensor`] module is a small reverse-mode
//! autodiff engine purpose-built for that.

pub mod config;
pub mod container;
pub mod cvae;
pub mod exec;
pub mod features;
pub mod generator;
pub mod harness;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod params;
pub mod rng;
pub mod tensor;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Shape(_) | Error::Data(_) | Error::Io(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}
