//! Run traces: per-step decision records plus optional tensor snapshots.
//!
//! On disk a trace is a binary `MCTR` container of length-prefixed records
//! and a JSON sidecar carrying the [`TraceHeader`].

mod io;

pub use io::{read_header, read_records, read_trace, write_header, write_records, write_trace, MAGIC, VERSION};

use serde::{Deserialize, Serialize};

use crate::analysis::flops::{FlopsModel, StepFlops};
use crate::error::{Error, Result};
use crate::field::FieldKind;
use crate::model::NoiseSchedule;
use crate::policy::{Phase, PolicyConfig, StepMode};
use crate::tensor::{Shape, Tensor, TokenMask};

/// How much tensor data a run records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verbosity {
    /// Step records only.
    #[default]
    Decisions,
    /// Adds input latents, importance and weight maps, and final latents.
    Latents,
    /// Adds residual-cache contents after every step.
    Residuals,
}

impl Verbosity {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "decisions" => Ok(Verbosity::Decisions),
            "latents" => Ok(Verbosity::Latents),
            "residuals" => Ok(Verbosity::Residuals),
            _ => Err(Error::invalid(format!("unknown verbosity `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnapshotKind {
    /// Chunk latent entering the step.
    InputLatent,
    /// Residual cache after the step.
    Residual,
    /// Importance map `M` (`F×H×W`).
    Importance,
    /// Soft weights `W` (`F×H×W`).
    Weight,
    FinalLatent,
    /// Euler output using a fresh full evaluation.
    ProbeTrueOutput,
    /// Euler output reusing the cached residual.
    ProbeCachedOutput,
    ProbeTrueResidual,
    ProbeCachedResidual,
}

impl SnapshotKind {
    const ALL: [SnapshotKind; 9] = [
        SnapshotKind::InputLatent,
        SnapshotKind::Residual,
        SnapshotKind::Importance,
        SnapshotKind::Weight,
        SnapshotKind::FinalLatent,
        SnapshotKind::ProbeTrueOutput,
        SnapshotKind::ProbeCachedOutput,
        SnapshotKind::ProbeTrueResidual,
        SnapshotKind::ProbeCachedResidual,
    ];

    pub fn code(self) -> u8 {
        SnapshotKind::ALL.iter().position(|k| *k == self).unwrap() as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        SnapshotKind::ALL.get(c as usize).copied()
    }
}

/// One chunk at one global step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub global_step: u64,
    pub chunk: u32,
    /// Timestep of the input latent; the step produces `t − 1`.
    pub t: u32,
    pub step_in_window: u32,
    pub mode: StepMode,
    pub phase: Phase,
    /// Relative L1 change of the chunk latent; absent on its first step.
    pub delta: Option<f64>,
    pub active_count: u32,
    pub tokens: u32,
    pub n_kv: u32,
    pub kv_projected: u32,
    pub full_count: u32,
    pub mask: TokenMask,
    pub flops: StepFlops,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub chunk: u32,
    pub t: u32,
    pub global_step: u64,
    pub kind: SnapshotKind,
    pub dims: Vec<u32>,
    pub data: Vec<f64>,
}

impl Snapshot {
    pub fn from_tensor(chunk: usize, t: usize, global_step: usize, kind: SnapshotKind, x: &Tensor) -> Self {
        let s = x.shape();
        Snapshot {
            chunk: chunk as u32,
            t: t as u32,
            global_step: global_step as u64,
            kind,
            dims: vec![s.frames as u32, s.height as u32, s.width as u32, s.channels as u32],
            data: x.data().to_vec(),
        }
    }

    /// Token map over `F×H×W`.
    pub fn from_map(chunk: usize, t: usize, global_step: usize, kind: SnapshotKind, shape: Shape, map: &[f64]) -> Self {
        Snapshot {
            chunk: chunk as u32,
            t: t as u32,
            global_step: global_step as u64,
            kind,
            dims: vec![shape.frames as u32, shape.height as u32, shape.width as u32],
            data: map.to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let d: Vec<usize> = self.dims.iter().map(|&v| v as usize).collect();
        let shape = match d.as_slice() {
            [f, h, w, c] => Shape::new(*f, *h, *w, *c)?,
            [f, h, w] => Shape::new(*f, *h, *w, 1)?,
            _ => return Err(Error::Format(format!("snapshot rank {} is not a latent", d.len()))),
        };
        Tensor::new(shape, self.data.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceRecord {
    Step(StepRecord),
    Snapshot(Snapshot),
}

/// Sidecar metadata describing the run that produced a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub policy: PolicyConfig,
    pub field: FieldKind,
    pub shape: Shape,
    pub num_chunks: usize,
    pub schedule: NoiseSchedule,
    pub verbosity: Verbosity,
    pub kv_refresh: KvRefresh,
    pub flops_model: FlopsModel,
    /// Set when a policy never left Phase 1 for some chunk.
    pub degenerate: bool,
    pub notes: Vec<String>,
}

/// K/V treatment of tokens skipped in a sparse step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KvRefresh {
    /// Keep the K/V from each token's last computation.
    #[default]
    Stale,
    /// Re-project every token's K/V from the current latent.
    Fresh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

impl RunTrace {
    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Step(s) => Some(s),
            _ => None,
        })
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &Snapshot> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Snapshot(s) => Some(s),
            _ => None,
        })
    }

    pub fn snapshots_of(&self, kind: SnapshotKind) -> impl Iterator<Item = &Snapshot> {
        self.snapshots().filter(move |s| s.kind == kind)
    }

    pub fn token_forwards(&self) -> u64 {
        self.steps().map(|s| s.active_count as u64).sum()
    }

    /// Step records in order for one chunk.
    pub fn chunk_steps(&self, chunk: usize) -> impl Iterator<Item = &StepRecord> {
        self.steps().filter(move |s| s.chunk as usize == chunk)
    }

    pub fn require_verbosity(&self, min: Verbosity) -> Result<()> {
        if self.header.verbosity < min {
            return Err(Error::state(format!(
                "trace was recorded at verbosity {:?}, {:?} is required",
                self.header.verbosity, min
            )));
        }
        Ok(())
    }
}

impl RunTrace {
    /// Snapshots of one kind keyed by `(chunk, t)`; later entries win.
    pub fn snapshot_map(&self, kind: SnapshotKind) -> std::collections::BTreeMap<(u32, u32), &Snapshot> {
        self.snapshots_of(kind).map(|s| ((s.chunk, s.t), s)).collect()
    }

    /// Step records keyed by `(chunk, t)`.
    pub fn step_map(&self) -> std::collections::BTreeMap<(u32, u32), &StepRecord> {
        self.steps().map(|s| ((s.chunk, s.t), s)).collect()
    }
}
