// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod balancer;
pub mod capacity;
pub mod des;
pub mod error;
pub mod estimator;
pub mod generator;
pub mod ledger;
pub mod queue;
pub mod routing;
pub mod scenario;
pub mod trace;

pub use error::{Error, Result};
