// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod kernel;
pub mod membership;
pub mod models;
pub mod qp;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
