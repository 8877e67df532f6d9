//! Optimistic learning for constrained, infinite-horizon tabular MDPs.
//!
//! * [`model`]: constrained MDPs, policies, occupancy measures, counts.
//! * [`simplex`]: dense two-phase simplex solver.
//! * [`occupancy`]: known-model and optimistic occupancy-measure programs.
//! * [`confidence`]: L1 confidence radii and concentration checks.
//! * [`learner`]: the epoch-based optimistic constrained learner.
//! * [`envs`]: the queueing testbed and random instances.
//! * [`analysis`]: gain, bias, Bellman error and hitting times.
//! * [`harness`]: experiment configs, metrics and output files.

pub mod analysis;
pub mod confidence;
pub mod envs;
pub mod harness;
pub mod error;
pub mod learner;
pub mod model;
pub mod occupancy;
pub mod simplex;

pub use error::{Error, Result};
