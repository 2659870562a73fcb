//! Coupled simulation of nonparametric autoregression and regression
//! experiments, with numerical checks of the bounds that relate them.

// `!(x > 0.0)` guards are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod coupling;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod haar;
pub mod likelihood;
pub mod models;
pub mod rng;
pub mod simulate;
pub mod stationary;
pub mod stats;

pub use error::{Error, Result};
