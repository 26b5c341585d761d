//! Local error of residual reuse versus the residual change it stems from.
//!
//! For one Euler step `x' = x + v·dt`, reusing `ṽ = x + R_cached` instead of
//! `v = x + R_true` moves the output by exactly `|dt|·‖R_true − R_cached‖₂`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{RunTrace, SnapshotKind};

/// `ε` measured between the two outputs, against `|dt|·‖ΔR‖₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub chunk: u32,
    pub t: u32,
    /// `None` for the whole-chunk norm.
    pub token: Option<u32>,
    pub epsilon: f64,
    pub predicted: f64,
}

impl ErrorSample {
    pub fn violation(&self) -> f64 {
        (self.epsilon - self.predicted).abs() / self.epsilon.max(1e-300)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub samples: Vec<ErrorSample>,
    pub max_relative_violation: f64,
    pub max_abs_violation: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Whole-chunk and per-token samples from one pair of outputs and residuals.
pub fn error_samples(
    chunk: u32,
    t: u32,
    channels: usize,
    dt: f64,
    outputs: (&[f64], &[f64]),
    residuals: (&[f64], &[f64]),
) -> Result<Vec<ErrorSample>> {
    let n = outputs.0.len();
    if outputs.1.len() != n || residuals.0.len() != n || residuals.1.len() != n || channels == 0 || n % channels != 0 {
        return Err(Error::invalid("paired outputs and residuals must share one shape"));
    }
    let mut out = vec![ErrorSample {
        chunk,
        t,
        token: None,
        epsilon: dist(outputs.0, outputs.1),
        predicted: dt.abs() * dist(residuals.0, residuals.1),
    }];
    for p in 0..n / channels {
        let s = p * channels..(p + 1) * channels;
        out.push(ErrorSample {
            chunk,
            t,
            token: Some(p as u32),
            epsilon: dist(&outputs.0[s.clone()], &outputs.1[s.clone()]),
            predicted: dt.abs() * dist(&residuals.0[s.clone()], &residuals.1[s]),
        });
    }
    Ok(out)
}

pub fn summarize(samples: Vec<ErrorSample>) -> ErrorReport {
    let max_relative_violation = samples.iter().map(ErrorSample::violation).fold(0.0, f64::max);
    let max_abs_violation = samples.iter().map(|s| (s.epsilon - s.predicted).abs()).fold(0.0, f64::max);
    ErrorReport {
        samples,
        max_relative_violation,
        max_abs_violation,
    }
}

/// Checks every probed step of a trace recorded with probing enabled.
pub fn prop1_check(trace: &RunTrace) -> Result<ErrorReport> {
    let true_out = trace.snapshot_map(SnapshotKind::ProbeTrueOutput);
    let cached_out = trace.snapshot_map(SnapshotKind::ProbeCachedOutput);
    let true_r = trace.snapshot_map(SnapshotKind::ProbeTrueResidual);
    let cached_r = trace.snapshot_map(SnapshotKind::ProbeCachedResidual);
    if true_out.is_empty() {
        return Err(Error::invalid("trace has no paired true/cached outputs; enable probing"));
    }
    let dt = trace.header.schedule.dt();
    let c = trace.header.shape.channels;
    let mut samples = Vec::new();
    for (key, a) in &true_out {
        let missing = || Error::invalid(format!("probe at chunk {} t {} is incomplete", key.0, key.1));
        let b = cached_out.get(key).ok_or_else(missing)?;
        let ra = true_r.get(key).ok_or_else(missing)?;
        let rb = cached_r.get(key).ok_or_else(missing)?;
        samples.extend(error_samples(key.0, key.1, c, dt, (&a.data, &b.data), (&ra.data, &rb.data))?);
    }
    Ok(summarize(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unchanged_residual_gives_zero_error() {
        let x = [1.0, 2.0, -0.5, 0.25];
        let r = [0.3, -0.1, 2.0, 0.0];
        let dt = -0.02;
        let out: Vec<f64> = x.iter().zip(&r).map(|(a, b)| a + (a + b) * dt).collect();
        let s = error_samples(0, 3, 2, dt, (&out, &out), (&r, &r)).unwrap();
        assert!(s.iter().all(|e| e.epsilon == 0.0 && e.predicted == 0.0 && e.violation() == 0.0));
    }

    #[test]
    fn zero_step_gives_zero_error() {
        let x = [1.0, 2.0];
        let s = error_samples(0, 1, 1, 0.0, (&x, &x), (&[0.5, 0.1], &[3.0, -1.0])).unwrap();
        assert!(s.iter().all(|e| e.epsilon == 0.0 && e.predicted == 0.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(error_samples(0, 1, 2, 0.1, (&[1.0; 4], &[1.0; 4]), (&[0.0; 4], &[0.0; 3])).is_err());
    }
}
