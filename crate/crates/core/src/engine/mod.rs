//! The open-world loop, its ablations, and simple baselines.

mod config;
mod report;
mod run;
mod scenario;

pub use config::{LoopConfig, Variant};
pub use report::{CompositionSnapshot, OodCounts, RunReport, StepRecord, TimestepRecord};
pub use run::{evaluate, run_bowl, run_variant, RunData, RunFailure};
pub use scenario::{assemble, build_network, Scenario};
