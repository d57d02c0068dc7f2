//! Simulation and sample-path gradient estimation for threshold-driven
//! intermittent androgen suppression, modelled as a stochastic hybrid automaton
//! with two tumour subpopulations and serum androgen.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: parameters, state, drifts, guards and Jacobians
//! - [`noise`]: seeded per-step noise streams
//! - [`simulator`]: RK4 time stepping with event localization
//! - [`ipa`]: state and event-time derivatives
//! - [`cost`]: the sample cost and its gradient
//! - [`fd`]: finite-difference validation with common random numbers
//! - [`sweep`]: replications, scenario classification and threshold grids
//! - [`config`], [`output`]: JSON configuration and CSV output

// `!(x > 0.0)` is used on purpose so NaN fails validation; parameter-slot
// loops index several parallel arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod cost;
pub mod error;
pub mod fd;
pub mod ipa;
pub mod model;
pub mod noise;
pub mod output;
pub mod simulator;
pub mod sweep;

pub use config::{default_config, load_config, InitialState, RunConfig, ThetaBounds};
pub use cost::CostAccumulator;
pub use error::{Error, Result};
pub use fd::{FdReport, Tolerance, Verdict};
pub use ipa::{AndrogenSensitivity, DerivTable};
pub use model::{
    EventKind, HybridState, Mode, ModelParams, Params, ThetaIndex, Thresholds, N_THETA,
};
pub use noise::NoiseConfig;
pub use simulator::{run_sample_path, run_with_gradient, simulate, PathOutput, SimOptions, Trajectory};
pub use sweep::{GridRange, Scenario, SweepRecord};
