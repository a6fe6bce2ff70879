//! Conditional flow-matching diffusion transformer for virtual try-on.
//!
//! The crate is `no_std` (with `alloc`) and holds every algorithmic piece of
//! the pipeline: the synthetic try-on renderer, the patch codec, spatial
//! condition merging and loss weighting, 3-axis rotary coordinates, grouped
//! attention with its condition KV cache, the transformer itself with
//! hand-written backpropagation, the Euler sampler and evaluation metrics.
//! File formats, timing and the command-line harness live in the `promo`
//! companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attention;
pub mod codec;
pub mod error;
pub mod image;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod real;
pub mod rope;
pub mod sampler;
pub mod spatial;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
