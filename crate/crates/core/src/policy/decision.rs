use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::TokenMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Vanilla,
    StepLevel,
    ChunkLevel,
    #[serde(rename = "motioncache")]
    MotionCache,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Vanilla,
        PolicyKind::StepLevel,
        PolicyKind::ChunkLevel,
        PolicyKind::MotionCache,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Vanilla => "vanilla",
            PolicyKind::StepLevel => "step-level",
            PolicyKind::ChunkLevel => "chunk-level",
            PolicyKind::MotionCache => "motioncache",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::invalid(format!("unknown policy `{name}`")))
    }
}

fn default_alpha() -> f64 {
    0.5
}
fn default_tau() -> f64 {
    0.1
}
fn default_k() -> usize {
    6
}
fn default_m() -> usize {
    4
}
fn default_eps() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Phase-1 and chunk-level gate; falls back to `tau`.
    #[serde(default)]
    pub tau_chunk: Option<f64>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_eps")]
    pub eps_num: f64,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        PolicyConfig {
            kind,
            alpha: default_alpha(),
            tau: default_tau(),
            tau_chunk: None,
            k: default_k(),
            m: default_m(),
            eps_num: default_eps(),
        }
    }

    pub fn tau_chunk(&self) -> f64 {
        self.tau_chunk.unwrap_or(self.tau)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == PolicyKind::Vanilla {
            return Ok(());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha", format!("must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::config("tau", format!("must be > 0, got {}", self.tau)));
        }
        if !(self.tau_chunk() > 0.0) {
            return Err(Error::config("tau_chunk", "must be > 0"));
        }
        if !(self.eps_num > 0.0) || !self.eps_num.is_finite() {
            return Err(Error::config("eps_num", "must be finite and > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepMode {
    FullCompute,
    FullSkip,
    TokenSparse,
}

impl StepMode {
    pub fn code(self) -> u8 {
        match self {
            StepMode::FullCompute => 0,
            StepMode::FullSkip => 1,
            StepMode::TokenSparse => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [StepMode::FullCompute, StepMode::FullSkip, StepMode::TokenSparse]
            .into_iter()
            .find(|m| m.code() == c)
    }
}

/// Where a chunk sits in its caching schedule at a given step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// No caching at all.
    Uncached,
    Warmup,
    /// Step- or chunk-level gate of a baseline policy.
    Gated,
    Phase1,
    Phase2,
}

impl Phase {
    pub fn code(self) -> u8 {
        match self {
            Phase::Uncached => 0,
            Phase::Warmup => 1,
            Phase::Gated => 2,
            Phase::Phase1 => 3,
            Phase::Phase2 => 4,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [Phase::Uncached, Phase::Warmup, Phase::Gated, Phase::Phase1, Phase::Phase2]
            .into_iter()
            .find(|p| p.code() == c)
    }

    pub fn label(self) -> &'static str {
        match self {
            Phase::Uncached => "uncached",
            Phase::Warmup => "warmup",
            Phase::Gated => "gated",
            Phase::Phase1 => "phase1",
            Phase::Phase2 => "phase2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDecision {
    pub mode: StepMode,
    pub phase: Phase,
    pub mask: TokenMask,
    pub delta: Option<f64>,
    /// Post-warm-up full computations including this step.
    pub full_count: usize,
}

impl StepDecision {
    pub fn from_mask(mask: TokenMask, phase: Phase, delta: Option<f64>, full_count: usize) -> Self {
        let mode = if mask.is_all() {
            StepMode::FullCompute
        } else if mask.is_none() {
            StepMode::FullSkip
        } else {
            StepMode::TokenSparse
        };
        StepDecision {
            mode,
            phase,
            mask,
            delta,
            full_count,
        }
    }
}

/// Scalar accumulate-and-threshold gate over whole chunks.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ChunkGate {
    pub accumulator: f64,
    pub full_count: usize,
}

/// Outcome of [`phase1_chunk_decision`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateOutcome {
    pub compute: bool,
    pub warmup: bool,
    pub gate: ChunkGate,
}

/// Warm-up steps always compute and leave the gate untouched. Otherwise
/// `Δ` is accumulated and the chunk computes iff the sum exceeds `τ_chunk`,
/// which resets the sum and increments the full-computation count.
pub fn phase1_chunk_decision(gate: ChunkGate, delta: f64, tau_chunk: f64, step_in_window: usize, m: usize) -> Result<GateOutcome> {
    if step_in_window < m {
        return Ok(GateOutcome {
            compute: true,
            warmup: true,
            gate,
        });
    }
    if !(delta >= 0.0) {
        return Err(Error::invalid(format!("chunk delta must be >= 0, got {delta}")));
    }
    let acc = gate.accumulator + delta;
    if acc > tau_chunk {
        Ok(GateOutcome {
            compute: true,
            warmup: false,
            gate: ChunkGate {
                accumulator: 0.0,
                full_count: gate.full_count + 1,
            },
        })
    } else {
        Ok(GateOutcome {
            compute: false,
            warmup: false,
            gate: ChunkGate {
                accumulator: acc,
                full_count: gate.full_count,
            },
        })
    }
}
