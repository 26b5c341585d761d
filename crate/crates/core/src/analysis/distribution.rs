//! Token-wise residual change between adjacent timesteps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::StepMode;
use crate::trace::{RunTrace, SnapshotKind, Verbosity};

use super::stats::quantile_sorted;

/// `‖R_t − R_{t+1}‖₂` per token of one chunk at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualDiff {
    pub chunk: u32,
    pub t: u32,
    pub norms: Vec<f64>,
}

/// Residual differences for every pair of consecutive steps that both
/// computed the whole chunk, ordered by chunk then descending `t`.
pub fn residual_differences(trace: &RunTrace) -> Result<Vec<ResidualDiff>> {
    trace.require_verbosity(Verbosity::Residuals)?;
    let residuals = trace.snapshot_map(SnapshotKind::Residual);
    let steps = trace.step_map();
    let c = trace.header.shape.channels;
    let mut out = Vec::new();
    for (&(chunk, t), r_t) in residuals.iter().rev() {
        let Some(r_next) = residuals.get(&(chunk, t + 1)) else { continue };
        let full = |key| steps.get(&key).is_some_and(|s| s.mode == StepMode::FullCompute);
        if !full((chunk, t)) || !full((chunk, t + 1)) {
            continue;
        }
        let norms = r_t
            .data
            .chunks(c)
            .zip(r_next.data.chunks(c))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
            .collect();
        out.push(ResidualDiff { chunk, t, norms });
    }
    out.sort_by(|a, b| a.chunk.cmp(&b.chunk).then(b.t.cmp(&a.t)));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Summary {
            count: s.len(),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            median: quantile_sorted(&s, 0.5),
            p90: quantile_sorted(&s, 0.9),
            p99: quantile_sorted(&s, 0.99),
            max: s.last().copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub chunk: u32,
    pub t: u32,
    pub stats: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub chunk: u32,
    pub frame: u32,
    pub stats: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionStats {
    pub overall: Summary,
    pub per_step: Vec<StepSummary>,
    /// Pooled over all steps, per frame within each chunk.
    pub per_frame: Vec<FrameSummary>,
}

pub fn residual_distribution(trace: &RunTrace) -> Result<DistributionStats> {
    let diffs = residual_differences(trace)?;
    if diffs.is_empty() {
        return Err(Error::InsufficientData("no consecutive fully computed steps".into()));
    }
    let hw = trace.header.shape.tokens_per_frame();
    let frames = trace.header.shape.frames;
    let all: Vec<f64> = diffs.iter().flat_map(|d| d.norms.iter().copied()).collect();
    let per_step = diffs
        .iter()
        .map(|d| StepSummary {
            chunk: d.chunk,
            t: d.t,
            stats: Summary::of(&d.norms),
        })
        .collect();
    let mut per_frame = Vec::new();
    for chunk in 0..trace.header.num_chunks as u32 {
        for f in 0..frames {
            let vals: Vec<f64> = diffs
                .iter()
                .filter(|d| d.chunk == chunk)
                .flat_map(|d| d.norms[f * hw..(f + 1) * hw].iter().copied())
                .collect();
            if !vals.is_empty() {
                per_frame.push(FrameSummary {
                    chunk,
                    frame: f as u32,
                    stats: Summary::of(&vals),
                });
            }
        }
    }
    Ok(DistributionStats {
        overall: Summary::of(&all),
        per_step,
        per_frame,
    })
}
