//! Weather-effect disentanglement for urban flow forecasting.
//!
//! The crate is `no_std` (it needs `alloc`) and holds everything that is pure
//! computation: the domain types, station interpolation and trip binning,
//! the synthetic city generator, a small reverse-mode autograd, the
//! dual-branch forecasting model, its optimizer and the attention-driven
//! causal augmentation. File formats, the training harness and the command
//! line live in the `wednet` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adversarial;
pub mod autograd;
pub mod causalaug;
pub mod datamodel;
pub mod embed;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod ingest;
pub mod layers;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
