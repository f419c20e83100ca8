//! Bayesian spatio-temporal segmented regression over areal panel data.
//!
//! The engine fits Gaussian panel outcomes with a threshold-indicator
//! covariate effect, BYM spatial random effects (intrinsic CAR plus
//! exchangeable), and a natural-cubic-spline time trend, by block Gibbs
//! sampling with exact conjugate conditionals. A scan driver sweeps a
//! (threshold, lag) grid to locate covariate-associated change points in
//! mean outcome levels, compared via DIC.

pub mod diagnostics;
pub mod error;
pub mod graph;
pub mod model;
pub mod panel;
pub mod sampler;
pub mod scan;
pub mod spline;
pub mod stats;

pub use error::{Error, Result};
