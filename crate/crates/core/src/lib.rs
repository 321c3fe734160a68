//! Hybrid accelerated extremum seeking (HAES).
//!
//! Zero-order optimization algorithms that are modelled as hybrid dynamical
//! systems: continuous flows driven by a sinusoidal dither and a restarting
//! timer, plus discrete jumps that reset the timer (and, for strongly convex
//! costs, the momentum). The crate is organised bottom-up:
//!
//! - [`hybrid`]: generic hybrid systems, fixed-step simulation, hybrid arcs
//!   and arc-closeness.
//! - [`dither`]: the torus oscillator, rational frequencies and the common
//!   averaging period.
//! - [`costs`]: cost oracles, constraint data and the benchmark problems.
//! - [`algorithms`]: builders for the four HAES variants and the
//!   gradient-descent ES baseline, plus restart tuning helpers.
//! - [`average`]: averaged dynamics, the Nesterov-ODE form and Lyapunov
//!   functions used as verification oracles.
//! - [`harness`]: disturbances, experiments, sweeps and run metrics.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod algorithms;
pub mod average;
pub mod costs;
pub mod dither;
mod error;
pub mod harness;
pub mod hybrid;

pub use error::{Error, Result};
