//! Numerical laboratory for bounded point derivations on vanishing
//! Campanato spaces.
// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod campanato;
pub mod cli;
pub mod criterion;
pub mod error;
pub mod frostman;
pub mod geometry;
pub mod hausdorff;
pub mod quadrature;
pub mod report;
pub mod sufficiency;
pub mod witness;

pub use error::{Error, Result};
