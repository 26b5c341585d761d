//! Open-loop replay of recorded token gates.

use crate::error::{Error, Result};
use crate::policy::{replay_crossings, Phase};
use crate::trace::{RunTrace, SnapshotKind, Verbosity};

/// The `(W, Δ)` inputs fed to one chunk's token-level gate.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSequence {
    pub chunk: u32,
    pub weights: Vec<Vec<f64>>,
    pub deltas: Vec<f64>,
}

/// Recorded Phase-2 gate inputs for every chunk that reached Phase 2.
///
/// Steps whose `Δ` was infinite select every token regardless of `τ` and
/// are left out.
pub fn gate_sequences(trace: &RunTrace) -> Result<Vec<GateSequence>> {
    trace.require_verbosity(Verbosity::Latents)?;
    let weights = trace.snapshot_map(SnapshotKind::Weight);
    let mut out: Vec<GateSequence> = Vec::new();
    for s in trace.steps().filter(|s| s.phase == Phase::Phase2) {
        let Some(delta) = s.delta.filter(|d| d.is_finite()) else { continue };
        let w = weights
            .get(&(s.chunk, s.t))
            .ok_or_else(|| Error::state(format!("no weight map for chunk {} at t = {}", s.chunk, s.t)))?;
        match out.last_mut() {
            Some(g) if g.chunk == s.chunk => {
                g.weights.push(w.data.clone());
                g.deltas.push(delta);
            }
            _ => out.push(GateSequence {
                chunk: s.chunk,
                weights: vec![w.data.clone()],
                deltas: vec![delta],
            }),
        }
    }
    Ok(out)
}

/// Total crossings over all sequences for each threshold, replayed from zero.
pub fn crossings_by_tau(sequences: &[GateSequence], taus: &[f64]) -> Result<Vec<usize>> {
    taus.iter()
        .map(|&tau| {
            sequences.iter().try_fold(0usize, |acc, g| {
                Ok(acc + replay_crossings(&g.weights, &g.deltas, 0.0, tau)?.iter().sum::<usize>())
            })
        })
        .collect()
}
