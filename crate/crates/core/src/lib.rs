//! Manoeuvring flight envelopes and terrain-avoiding emergency descent
//! planning for an impaired fixed-wing aircraft.

// `!(x > 0.0)` deliberately rejects NaN; index loops mirror the matrix algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod collocation;
pub mod envelope;
pub mod error;
pub mod flightdyn;
pub mod nlpsolve;
pub mod ocp;
pub mod planner;
pub mod terrain;
pub mod trim;
pub mod units;

pub use error::{Error, Result};
