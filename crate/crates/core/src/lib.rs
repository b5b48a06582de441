//! Low-dose CT enhancement workbench.
//!
//! Simulates paired full/quarter-dose CT slices, trains a U-Net that maps
//! quarter-dose reconstructions onto full-dose ones, and evaluates the result
//! with pixel-correlation and PSNR metrics.

pub mod ctsim;
pub mod dataio;
pub mod error;
mod fsutil;
pub mod gradcheck;
pub mod metrics;
pub mod nnops;
pub mod rng;
pub mod tensor;
pub mod trainkit;
pub mod unet;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Scalar, Tensor};
