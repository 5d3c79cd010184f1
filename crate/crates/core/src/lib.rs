//! District heating network simulation and dynamic-similitude sizing.
//!
//! The crate models a supply plant feeding parallel user loops, each with a
//! three-way valve, a heat exchanger and a lumped thermal mass. It integrates
//! the network with closed valve and Peltier loops, nondimensionalises the
//! results with a Buckingham-π base and sizes lab-scale replicas whose groups
//! match a full-scale design.

// Negated comparisons are used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod control;
pub mod error;
pub mod harness;
pub mod hydraulics;
pub mod model;
pub mod nominal;
pub mod scenario;
pub mod sim;
pub mod similitude;
pub mod thermal;
pub mod trajectory;
pub mod units;

pub use error::{Error, Result};
