//! File formats, training harness and visualisation around `wednet-core`.

pub mod checkpoint;
pub mod config;
pub mod container;
pub mod csvio;
pub mod dataset;
pub mod harness;
pub mod viz;
