//! Noise schedule, Euler integration and chunk windowing.

mod ops;
mod schedule;

pub use ops::{euler_step, forward_interpolate};
pub use schedule::{chunk_window, NoiseSchedule, SigmaKind, StepWindow};

use crate::tensor::Tensor;

/// One chunk's latent together with the timestep it currently sits at.
///
/// Chunks are indexed from 0 internally; chunk `i` here is chunk `i + 1`
/// in the 1-based window formula.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentChunk {
    pub index: usize,
    pub data: Tensor,
    pub timestep: usize,
}
