// Negated comparisons below are deliberate: NaN must fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod attacks;
pub mod dynamics;
pub mod error;
pub mod netmodel;
pub mod powerflow;
pub mod reserves;

pub use error::{Error, Result};
