//! Bootstrap tests for multiple structural breaks in linear models estimated
//! by two-stage least squares.
//!
//! The crate covers the whole pipeline: model and data types, a simulator for
//! the standard break scenarios, 2SLS estimation on partitioned samples,
//! dynamic-programming break search, sup-Wald and sup-F statistics, wild
//! recursive and wild fixed bootstraps, sequential break counting in the
//! reduced form and a Monte Carlo harness.

// Index loops mirror the algebra, and `!(x <= cap)` comparisons reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod dgp;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod par;
pub mod partition_search;
pub mod rng;
pub mod sequential;
pub mod stats;

pub use error::{Error, Result};
pub use model::{Dataset, ModelSpec, Partition, RegimeEstimates, Role};
