//! Learned point cloud attribute compression.
//!
//! A multiscale autoencoder built from external cross attention layers
//! compresses per-point colors given losslessly known geometry. Latents are
//! quantized, entropy coded with a learned factorized prior and packed into
//! a self-describing bitstream.

pub mod attention;
pub mod codec;
pub mod entropy;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod pointcloud;
pub mod sampling;
pub mod training;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
