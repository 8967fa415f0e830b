//! Regression-based control variates for weak SDE discretisation schemes.
//!
//! The crate simulates weak Euler and simplified second-order weak Taylor
//! schemes driven by discrete noise, builds martingale control variates from
//! per-step coefficient functions, and estimates `E f(X_T)` three ways:
//!
//! * plain Monte Carlo,
//! * Monte Carlo minus a control variate with regression-fitted
//!   coefficients (optionally truncated to the low-order terms and clamped),
//! * the same with coefficients from an exact enumeration oracle, which is
//!   feasible for small models and serves as ground truth in tests.
//!
//! Everything downstream of a `(seed, path_id)` pair is deterministic: the
//! RNG is a keyed counter, reductions run over fixed-size chunks, and the
//! `parallel` feature only changes who executes each chunk, never the
//! result.

pub mod basis;
pub mod error;
pub mod estimator;
pub mod model;
pub mod models;
pub mod oracle;
pub mod parallel;
pub mod quadrature;
pub mod regression;
pub mod rng;
pub mod scheme;
pub mod stats;
pub mod table;
pub mod terms;

pub use error::{Error, Result};
