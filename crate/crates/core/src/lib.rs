//! Task-oriented communication design for multi-agent control.
//!
//! Agents on a grid quantize what they see into a small codebook and a
//! central controller acts on the received codewords alone. The crate covers
//! the environment, the centralized solver, action-based state aggregation
//! quantizers, controllers over message histories, hand-crafted baselines,
//! communication metrics and an experiment harness.

pub mod baselines;
pub mod controller;
pub mod env;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod quantizer;
pub mod solver;

pub use env::{GridSpec, GridWorld, JointAction, JointState, Move, Observation};
pub use error::{Error, Result};
pub use solver::{Policy, QTable};
