//! Multi-view urban region embedding, without the standard library.
//!
//! The crate covers the whole numerical pipeline: probability-vector
//! divergences, heterogeneous region graphs, a small reverse-mode tape,
//! the three-stage relation-aware embedding network and its pretraining
//! losses, an Adam trainer, and the Ridge / k-fold evaluation harness.
//! Everything here is pure computation over `alloc` collections; file
//! formats, parallel sweeps and the command line live in the `regionvec`
//! companion crate.

#![no_std]
// `!(x >= 0.0)` style guards are there to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod divergence;
pub mod downstream;
mod error;
pub mod graph;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
