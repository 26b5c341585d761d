//! Empirical bound between residual change and intra-chunk frame difference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::StepMode;
use crate::trace::{RunTrace, SnapshotKind, Verbosity};

use super::stats::spearman;

/// One token: `lhs = ‖R_{t−1} − R_t‖₂`, `rhs = ‖X_t^f − X_t^{f−1}‖₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaSample {
    pub chunk: u32,
    pub t: u32,
    pub token: u32,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub samples: usize,
    /// Smallest `C` with `lhs ≤ C·rhs` on every sample; infinite when some
    /// sample has `rhs = 0 < lhs`.
    pub c_max: f64,
    /// Least-squares slope of `lhs` on `rhs` through the origin.
    pub slope: f64,
    pub spearman: f64,
    /// Share of samples satisfying the bound at `c_max`.
    pub holds_fraction: f64,
}

fn max_ratio(samples: &[LemmaSample]) -> f64 {
    samples.iter().fold(0.0f64, |c, s| {
        if s.rhs > 0.0 {
            c.max(s.lhs / s.rhs)
        } else if s.lhs > 0.0 {
            f64::INFINITY
        } else {
            c
        }
    })
}

fn holds(s: &LemmaSample, c: f64) -> bool {
    if s.rhs > 0.0 {
        s.lhs / s.rhs <= c
    } else {
        s.lhs == 0.0 || c.is_infinite()
    }
}

/// Samples for frames `f ≥ 1` of every step pair that computed all tokens.
pub fn lemma_samples(trace: &RunTrace) -> Result<Vec<LemmaSample>> {
    trace.require_verbosity(Verbosity::Residuals)?;
    let residuals = trace.snapshot_map(SnapshotKind::Residual);
    let latents = trace.snapshot_map(SnapshotKind::InputLatent);
    let steps = trace.step_map();
    let shape = trace.header.shape;
    let (hw, c) = (shape.tokens_per_frame(), shape.channels);
    let full = |key| steps.get(&key).is_some_and(|s: &&crate::trace::StepRecord| s.mode == StepMode::FullCompute);
    let mut out = Vec::new();
    for (&(chunk, t), r_t) in &residuals {
        if t == 0 {
            continue;
        }
        let (Some(r_prev), Some(x)) = (residuals.get(&(chunk, t - 1)), latents.get(&(chunk, t))) else {
            continue;
        };
        if !full((chunk, t)) || !full((chunk, t - 1)) {
            continue;
        }
        for p in hw..shape.tokens() {
            let span = p * c..(p + 1) * c;
            let back = (p - hw) * c..(p - hw + 1) * c;
            let lhs = r_prev.data[span.clone()]
                .iter()
                .zip(&r_t.data[span.clone()])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let rhs = x.data[span]
                .iter()
                .zip(&x.data[back])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            out.push(LemmaSample {
                chunk,
                t,
                token: p as u32,
                lhs,
                rhs,
            });
        }
    }
    Ok(out)
}

pub fn lemma_report(samples: &[LemmaSample]) -> Result<LemmaReport> {
    if samples.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "lemma check needs at least 10 samples, got {}",
            samples.len()
        )));
    }
    let c_max = max_ratio(samples);
    let (num, den) = samples
        .iter()
        .fold((0.0, 0.0), |(n, d), s| (n + s.lhs * s.rhs, d + s.rhs * s.rhs));
    let lhs: Vec<f64> = samples.iter().map(|s| s.lhs).collect();
    let rhs: Vec<f64> = samples.iter().map(|s| s.rhs).collect();
    let ok = samples.iter().filter(|s| holds(s, c_max)).count();
    Ok(LemmaReport {
        samples: samples.len(),
        c_max,
        slope: if den > 0.0 { num / den } else { f64::NAN },
        spearman: spearman(&lhs, &rhs),
        holds_fraction: ok as f64 / samples.len() as f64,
    })
}

pub fn lemma_check(trace: &RunTrace) -> Result<LemmaReport> {
    lemma_report(&lemma_samples(trace)?)
}
