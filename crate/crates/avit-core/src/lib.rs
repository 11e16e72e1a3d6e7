//! Core library for an adapter-tuned Vision Transformer segmentation model.
//!
//! Everything in this crate is `no_std` + `alloc`: a dense-tensor
//! reverse-mode autodiff engine, the model itself (ViT backbone with
//! bottleneck adapters, a convolutional prompt generator, an ASPP decoder),
//! the training loop with its losses and optimizer, and closed-form
//! parameter/FLOP accounting. File formats, datasets and the CLI live in the
//! companion `avit` crate.
//!
//! Determinism is a design goal throughout: all reductions run in a fixed
//! order on a single thread, random numbers come from an owned counter-based
//! generator, and transcendentals are computed in software so results are
//! bit-identical across runs and platforms.

#![no_std]

extern crate alloc;

#[cfg(test)]
#[macro_use]
extern crate std;

pub mod analysis;
pub mod augment;
pub mod backbone;
pub mod check;
pub mod data;
pub mod decoder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod prompt;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Tape, Tensor, Var};
