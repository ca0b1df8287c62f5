//! AMSA-UNet: an asymmetric three-scale U-Net for single-image deblurring
//! whose decoder uses frequency-domain self-attention.
//!
//! The crate is self-contained: a small reverse-mode tensor engine
//! ([`tensor`]), a radix-2 FFT ([`fourier`]), the network blocks and model,
//! a PGM/PPM data pipeline, training utilities and an attention benchmark.

pub mod bench;
pub mod blocks;
pub mod data;
pub mod error;
pub mod fourier;
pub mod gradcheck;
pub mod network;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Conv2dOptions, Gradients, Graph, Shape, Tensor};
