#![no_std]
//! Portrait delighting core: image primitives, training-tuple synthesis from
//! one-light-at-a-time captures, a shared-encoder dual-decoder network with a
//! hand-written backward pass, its losses, and evaluation metrics.
//!
//! Everything here is pure computation over `alloc`; file formats, the
//! training driver and the CLI live in the `delight` crate.

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod evalx;
pub mod image;
pub mod imaging;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod trainer;
pub mod datasynth;
pub mod fixtures;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use image::{MaskImage, RasterImage, ValueRange};
