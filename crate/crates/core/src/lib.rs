// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod besov;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod geometry;
pub mod integrate;
pub mod kernel;
pub mod quad;
pub mod source;
pub mod spherical;

pub use error::{Error, Result};
