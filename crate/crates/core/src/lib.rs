//! Simulation, equilibrium and verification toolkit for the two-stage price
//! drop rule: a platform (or buyer) commitment that insures a seller who
//! undercuts a cartel against the punishment that follows.

// Index loops mirror the per-seller formulas; negated comparisons reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod env;
pub mod equilibrium;
pub mod error;
pub mod harness;
pub mod market;
pub mod mechanism;
pub mod qlearning;
pub mod verifier;

pub use error::{Error, Result};
