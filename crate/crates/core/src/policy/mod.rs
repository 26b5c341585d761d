//! Caching policies and the denoising loop that executes them.

mod decision;
mod importance;
mod residual;
mod runner;

pub use decision::{phase1_chunk_decision, ChunkGate, GateOutcome, Phase, PolicyConfig, PolicyKind, StepDecision, StepMode};
pub use importance::{accumulate, importance_map, replay_crossings, soft_map, soft_map_frames, threshold_mask, ImportanceState};
pub use residual::{approximate_with_cache, compute_residual, relative_l1, ResidualCache};
pub use runner::{run_denoise, RunOptions, RunOutput};
