//! Experiment orchestration.

pub mod artifacts;
pub mod config;
pub mod pipeline;
pub mod rng;
pub mod rollout;
pub mod sweep;

pub use config::{ControllerConfig, ControllerKind, ExperimentConfig, Profile, Scheme};
pub use pipeline::{run_pipeline, Agents, MetricRow, RunKey, RunOutput, RunSummary};
pub use rollout::{evaluate, ReturnStats, Team};
pub use sweep::{run_sweep, SweepSpec};
