//! Super-resolution fine-tuning toolkit: a small reverse-mode tensor engine,
//! high-order degradation synthesis, the RRDB generator and spectrally
//! normalized U-Net discriminator, the GAN fine-tuning loop, PSNR/SSIM
//! evaluation protocols, and image/checkpoint/dataset I/O.

pub mod config;
pub mod degradation;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod networks;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Gradients, Scalar, Shape, Tape, Tensor, Var};
