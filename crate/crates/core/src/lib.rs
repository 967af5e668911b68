// Index loops read better than iterator chains in the dense-matrix kernels
// that dominate this crate.
#![allow(clippy::needless_range_loop)]

//! Multimodal transformer activity recognition from skeleton-joint and
//! acceleration streams.
//!
//! The crate is self-contained: a small reverse-mode autodiff core
//! ([`numerics`]), dual-modality data loading and multirate preprocessing
//! ([`dataio`]), four transformer variants with CrossView attention fusion
//! ([`model`]), SGD/ASAM optimization with cosine annealing ([`optim`]), a
//! training/evaluation/ablation harness ([`harness`]) and a command-line
//! front end ([`cli`]).

pub mod cli;
pub mod dataio;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod optim;

pub use error::{Error, Result};
