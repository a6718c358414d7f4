//! Longitudinal car-following toolkit built around a modular deep
//! reinforcement learning agent.
//!
//! Two DDPG policies are trained separately: a free-driving policy that
//! holds a desired speed and a car-following policy that keeps a safe,
//! comfortable gap. At run time their accelerations are combined with a
//! `min` arbitrator. An Intelligent Driver Model baseline, its calibration
//! by `SSE(ln g)`, and a validation harness (string stability, TTC,
//! cross-comparison) complete the crate.

pub mod agent;
pub mod checkpoint;
pub mod ddpg;
pub mod error;
pub mod harness;
pub mod idm;
pub mod nn;
pub mod optim;
pub mod rewards;
pub mod sim;
pub mod stochastic;

pub use error::{Error, Result};
