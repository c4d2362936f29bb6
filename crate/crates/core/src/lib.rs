//! Locally stationary Hawkes processes: simulation, maximum-likelihood
//! estimation, and a likelihood-ratio test for time invariance of the
//! reproduction rate.
//!
//! A multivariate Hawkes process on `[0, T]` is locally stationary when its
//! kernel amplitude depends on normalized time `t/T` through a reproduction
//! rate `g`. This crate provides:
//!
//! - exact simulation by thinning ([`simulate`]),
//! - the log-likelihood, its analytic gradient, and the observed information
//!   ([`likelihood`]),
//! - box-constrained maximum-likelihood fitting with multistart
//!   ([`estimate`]),
//! - the likelihood-ratio statistic for "g is constant" with a boundary
//!   degrees-of-freedom correction ([`lrt`]),
//! - a limit-order-book order-flow pipeline ([`lob`]),
//! - reproducible Monte Carlo experiment drivers ([`experiments`]).
//!
//! Monte Carlo layers run data-parallel through rayon when the default
//! `parallel` feature is enabled and fall back to sequential execution
//! without it; results are bit-identical either way.

pub mod bernstein;
pub mod error;
pub mod estimate;
pub mod events;
pub mod experiments;
pub mod gof;
pub mod intensity;
pub mod kernels;
pub mod likelihood;
pub mod lob;
pub mod lrt;
pub mod model;
pub mod params;
pub mod replicates;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use events::{validate_events, EventSequence, SequenceMeta};
pub use model::{Activation, Baseline, Entry, KernelSpec, ModelSpec, ParamLayout, Reproduction};
pub use params::{clamp_to_bounds, ParamVector};
pub use rng::RngStream;
