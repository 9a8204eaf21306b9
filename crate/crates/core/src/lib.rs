#![no_std]
// `!(a < b)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
extern crate alloc;

pub mod baselines;
pub mod csc;
pub mod error;
pub mod inference;
pub mod ipca;
pub mod linalg;
pub mod normalization;
pub mod panel;
pub mod simulation;
pub mod tuning;

pub use error::{Error, Result};
