//! Learned-dynamics model predictive control for a simulated cutting task.
//!
//! The crate is organised as a pipeline:
//!
//! * [`plant`] - deterministic 2-axis contact plant (Y sawing, Z cutting).
//! * [`controller`] - inverse-damping admittance control and the
//!   data-collection trajectories.
//! * [`dataset`] - trial logs to normalised, non-overlapping time blocks.
//! * [`dynmodel`] - the recurrent block dynamics network, its hand-derived
//!   gradients and the three-stage training curriculum.
//! * [`mpc`] - random-shooting receding-horizon controller.
//! * [`eval`] - baseline tuning, paired comparisons, the force-critical
//!   scenario and report emission.
//! * [`config`] / [`pipeline`] - run configuration and the end-to-end
//!   commands used by the `cutmpc` binary.

pub mod config;
pub mod controller;
pub mod dataset;
pub mod dynmodel;
pub mod error;
pub mod eval;
pub mod mpc;
pub mod pipeline;
pub mod plant;
pub mod vec2;

pub use error::{Error, Result};
pub use vec2::Vec2;
