//! Unpaired image-to-image translation with a generalized Gaussian residual
//! model: the generators predict per-pixel scale and shape maps alongside
//! the translated image, which yields closed-form aleatoric uncertainty.

// `!(x > 0.0)` is the NaN-rejecting form used throughout validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod ggd;
pub mod gradcheck;
pub mod metrics;
pub mod nets;
pub mod specfn;
pub mod tensor;
pub mod train;
pub mod uncertainty;

pub use error::{Error, Result};
