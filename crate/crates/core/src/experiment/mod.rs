//! Config-driven runs, sweeps, checks, exports and reports.

pub mod config;
pub mod export;
pub mod orchestrate;
pub mod report;
pub mod sweep;
pub mod verify;

pub use config::ExperimentConfig;
pub use export::{export_importance_frames, weight_localization, Localization, StepRange};
pub use orchestrate::{labelled_policies, prepare, run_experiment, run_policy, trace_path, write_experiment, PolicyRun, RunFilter, SeedRuns};
pub use report::{build_summary, latents_digest, QualityRow, RunRow, Summary};
pub use sweep::{match_token_forwards, sweep, write_sweep_csv, MatchedRun, SweepParam, SweepRow};
pub use verify::{sparse_dense_deviation, verify, MaskMode, SeedResult, VerifyKind, VerifyOptions, VerifyReport};
