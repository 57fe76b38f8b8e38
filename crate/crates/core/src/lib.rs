//! Large-portfolio structural credit model.
//!
//! Firms follow correlated drifted Brownian motions in distance-to-default and
//! default on first hitting zero. In the large-portfolio limit the density of
//! surviving firms solves a linear SPDE driven by the market factor, and the
//! portfolio loss is the mass absorbed at the boundary. The crate solves that
//! SPDE with piecewise-linear finite elements, prices tranches and forward
//! tranches from simulated loss paths, and calibrates volatility and implied
//! correlation. Two brute-force oracles (finite baskets and a filtering
//! recursion) validate the solver.
//!
//! ```
//! use credit_spde::model::{default_probability, FirstPassageQuery};
//!
//! let q = FirstPassageQuery::new(1.0, 0.0, 1.0).unwrap();
//! assert!((default_probability(&q) - 0.3173105078629141).abs() < 1e-12);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod engine;
pub mod error;
pub mod fem;
pub mod market_data;
pub mod market_path;
pub mod model;
pub mod oracle;
pub mod pricing;
pub mod study;
pub mod synthetic;
pub mod tridiag;

pub use error::{Error, Result};
