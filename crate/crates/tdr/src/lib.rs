//! Off-policy evaluation for tabular MDPs under weak distributional overlap.

// `!(x > 0.0)` guards reject NaN along with nonpositive values; rewriting
// them as `x <= 0.0` would silently accept NaN. Indexed loops stay where the
// code mirrors subscripted recursions.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod dist;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod io;
pub mod lepski;
pub mod mdp;
pub mod qp;
pub mod ratio;
pub mod rng;
pub mod value;

pub use error::{Result, TdrError};
