//! Conformal prediction for verification, runtime monitoring and safe control
//! of discrete-time stochastic systems.
//!
//! The crate is organised bottom-up:
//!
//! - [`cp_core`]: split-conformal quantiles and their calibration-conditional,
//!   robust and adaptive variants.
//! - [`stl`]: signal temporal logic with Boolean and quantitative semantics.
//! - [`predictors`]: constant-velocity and ridge autoregressive forecasters.
//! - [`abstraction`]: per-time prediction regions for trajectories.
//! - [`verification`]: offline certification of components and closed loops.
//! - [`monitoring`]: predictive runtime lower bounds on STL robustness.
//! - [`control`]: constraint-tightened planning and receding-horizon control.
//! - [`scenarios`]: seeded simulators, validation statistics and experiments.

#![allow(
    clippy::len_without_is_empty,
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::should_implement_trait,
    clippy::single_range_in_vec_init,
    clippy::too_many_arguments
)]

pub mod abstraction;
pub mod control;
pub mod cp_core;
pub mod dataset;
pub mod error;
pub mod monitoring;
pub mod predictors;
pub mod rng;
pub mod scenarios;
pub mod stl;
pub mod verification;

pub use error::{Error, Result};
