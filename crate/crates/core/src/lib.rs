//! Conditional (fixed-truth) frequentist inference for random effects in
//! Gaussian mixed-effects and penalized-regression models.
//!
//! The pipeline is: a [`model_core::JointModel`] supplies `l_c`, `l_r` and
//! their derivatives; [`laplace`] finds the posterior mode and the Laplace
//! marginal likelihood; [`outer`] maximizes it over θ; [`inference`] turns
//! the fit into bias-corrected and SVD-mixed estimators with conditional
//! MSEs and confidence intervals; [`simulation`] runs coverage experiments.

// `!(x > 0.0)` is used deliberately so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod inference;
pub mod io;
pub mod laplace;
pub mod linalg;
pub mod model_core;
pub mod models;
pub mod normal;
pub mod outer;
pub mod simulation;

pub use error::{Error, Result};
