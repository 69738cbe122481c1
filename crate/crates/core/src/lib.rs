//! UAV–UGV emergency network simulator with A3C and meta-A3C training.

// Parameter guards are written `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod a3c;
pub mod channel;
pub mod env;
pub mod error;
pub mod geom;
pub mod harness;
pub mod meta;
pub mod network;
pub mod nn;
pub mod scenario;

pub use error::{Error, Result};
