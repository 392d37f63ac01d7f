//! Numerical toolkit for user-level differential privacy in DP-SGD.

// negated comparisons double as NaN rejection
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod heuristics;
pub mod math;
pub mod mechanisms;
pub mod pld;
pub mod rdp;
pub mod sim;
pub mod variance;

pub use error::{Error, Result};
