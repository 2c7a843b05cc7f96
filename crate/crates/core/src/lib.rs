//! Spatial-temporal graph network for video instance segmentation.
//!
//! Everything here is pure computation over in-memory values: a small
//! reverse-mode autodiff engine, the network blocks built on it, the
//! inter-frame graph, detection / segmentation / tracking heads, the
//! training and online inference loops, a synthetic video generator and
//! the video AP/AR evaluator. File formats and the command line live in
//! the `stgvis` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod detect;
mod error;
pub mod geometry;
pub mod graph;
pub(crate) mod math;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod seg;
pub mod synth;
pub mod tensor;
pub mod track;

pub use error::{Error, Result};
pub use tensor::Tensor;
