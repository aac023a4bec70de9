//! DPP set-likelihood losses for sequential recommendation.
//!
//! This crate is `no_std` (with `alloc`) and holds the numerical pipeline:
//! kernel construction and set likelihoods ([`dpp`]), diverse-set generation
//! ([`diverse`]), low-rank diversity-kernel learning ([`kernel`]), the four
//! training losses ([`losses`]), a small embedding scorer with its training
//! loop ([`model`]), the data protocol ([`data`]) and ranking metrics
//! ([`metrics`]). File formats and the command line live in the `dppseq`
//! crate.
#![no_std]

extern crate alloc;

pub mod data;
pub mod diverse;
pub mod dpp;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod synth;

pub use error::{Error, Result};
