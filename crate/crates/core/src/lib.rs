//! Width- and depth-aware parameterizations (SP, muP, depth-alpha and
//! CompleteP) with a small transformer trainer, toy residual networks,
//! diagnostics for the stability and feature-learning desiderata, and
//! compute-optimal scaling utilities.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod optimizer;
pub mod parameterization;
pub mod report;
pub mod scaling;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
