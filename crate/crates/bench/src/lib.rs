//! Benchmark harness: experiment configuration, presets, multi-seed
//! orchestration, aggregation, and file emission around `alice-core`.

pub mod config;
pub mod presets;
pub mod rollout;
pub mod run;
pub mod svg;

pub use config::{ConfigError, ControllerKind, ExperimentConfig, ResolvedConfig, SeedSpec};
pub use presets::{preset, PRESET_NAMES};
pub use rollout::{assign_regret, run_rollout, RolloutData};
pub use run::{compare, execute, run, ControllerSummary, RunError, RunOutput};
