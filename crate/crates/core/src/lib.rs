//! Simplex quantile vector autoregression.
//!
//! Non-crossing conditional quantile curves for multivariate time series. Each
//! equation's quantile function is written as a barycentric combination of
//! monotone I-spline curves attached to the vertices of a simplex containing
//! the lagged data, so every fitted curve is nondecreasing in the quantile
//! level wherever the lagged values lie inside the bounds.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod basis;
pub mod dgp;
pub mod error;
pub mod experiment;
pub mod innovation;
pub mod irf;
pub mod model;
pub mod panel;
pub mod screen;
pub mod select;
pub mod simplex;
pub mod solver;

pub use error::{Result, SqvarError};
