//! Blind channel equalization with vector-quantized autoencoders.
//!
//! The crate bundles complex baseband primitives ([`dsp`]), forward channel
//! simulators ([`channels`]), a small differentiation and optimization
//! toolkit ([`diff`]), the equalizers and their trainers ([`equalizers`]),
//! and the experiment drivers that sweep them ([`experiments`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channels;
pub mod diff;
pub mod dsp;
pub mod equalizers;
pub mod error;
pub mod experiments;
pub mod rng;

pub use error::{Error, Result};
pub use num_complex::Complex64;
