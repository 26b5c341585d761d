//! Dense-transformer FLOPs accounting per step, chunk and run.
//!
//! Multiply-accumulates count as two FLOPs. For `N_q` computed query
//! tokens attending over `N_kv` keys at width `d` with FFN width `d_ffn`:
//! attention `4·N_q·N_kv·d`, projections `4·N_q·d² + 4·N_proj·d²` (Q and
//! output per query, K and V per projected row) and FFN `4·N_q·d·d_ffn`.
//! Tokens served from the residual cache cost one addition per channel and
//! are reported in a separate `reuse` bucket.

use std::collections::BTreeMap;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::trace::{RunTrace, StepRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsModel {
    pub d: usize,
    pub d_ffn: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StepFlops {
    pub attention: u64,
    pub attn_gemm: u64,
    pub ffn_gemm: u64,
    pub reuse: u64,
}

impl StepFlops {
    /// Attention, projection and FFN FLOPs; the negligible reuse bucket is excluded.
    pub fn compute_total(&self) -> u64 {
        self.attention + self.attn_gemm + self.ffn_gemm
    }

    pub fn total(&self) -> u64 {
        self.compute_total() + self.reuse
    }

    /// `true` if no compute category of `self` exceeds the matching one of `other`.
    pub fn dominated_by(&self, other: &StepFlops) -> bool {
        self.attention <= other.attention && self.attn_gemm <= other.attn_gemm && self.ffn_gemm <= other.ffn_gemm
    }
}

impl Add for StepFlops {
    type Output = StepFlops;
    fn add(self, o: StepFlops) -> StepFlops {
        StepFlops {
            attention: self.attention + o.attention,
            attn_gemm: self.attn_gemm + o.attn_gemm,
            ffn_gemm: self.ffn_gemm + o.ffn_gemm,
            reuse: self.reuse + o.reuse,
        }
    }
}

impl AddAssign for StepFlops {
    fn add_assign(&mut self, o: StepFlops) {
        *self = *self + o;
    }
}

impl std::iter::Sum for StepFlops {
    fn sum<I: Iterator<Item = StepFlops>>(iter: I) -> StepFlops {
        iter.fold(StepFlops::default(), Add::add)
    }
}

/// Cost of one chunk-step.
pub fn step_flops(model: &FlopsModel, n_q: usize, n_kv: usize, kv_projected: usize, tokens: usize) -> StepFlops {
    let (d, f) = (model.d as u64, model.d_ffn as u64);
    let (q, kv, proj) = (n_q as u64, n_kv as u64, kv_projected as u64);
    StepFlops {
        attention: 4 * q * kv * d,
        attn_gemm: 4 * q * d * d + 4 * proj * d * d,
        ffn_gemm: 4 * q * d * f,
        reuse: (tokens.saturating_sub(n_q) * model.channels) as u64,
    }
}

pub fn record_flops(model: &FlopsModel, r: &StepRecord) -> StepFlops {
    step_flops(
        model,
        r.active_count as usize,
        r.n_kv as usize,
        r.kv_projected as usize,
        r.tokens as usize,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsLedger {
    pub model: FlopsModel,
    pub per_step: Vec<StepFlops>,
    pub per_chunk: BTreeMap<u32, StepFlops>,
    pub total: StepFlops,
}

/// Re-derives every step's cost from the counts stored in the trace.
pub fn flops_account(trace: &RunTrace, model: &FlopsModel) -> FlopsLedger {
    let mut per_chunk: BTreeMap<u32, StepFlops> = BTreeMap::new();
    let per_step: Vec<StepFlops> = trace
        .steps()
        .map(|r| {
            let f = record_flops(model, r);
            *per_chunk.entry(r.chunk).or_default() += f;
            f
        })
        .collect();
    let total = per_step.iter().copied().sum();
    FlopsLedger {
        model: *model,
        per_step,
        per_chunk,
        total,
    }
}

impl FlopsLedger {
    /// Run total equals the sum of steps and the sum of chunks.
    pub fn is_additive(&self) -> bool {
        let steps: StepFlops = self.per_step.iter().copied().sum();
        let chunks: StepFlops = self.per_chunk.values().copied().sum();
        steps == self.total && chunks == self.total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_example() {
        let m = FlopsModel { d: 2, d_ffn: 8, channels: 2 };
        let f = step_flops(&m, 4, 4, 4, 4);
        assert_eq!(f.attention, 128);
        assert_eq!(f.attn_gemm, 8 * 4 * 4);
        assert_eq!(f.ffn_gemm, 4 * 4 * 2 * 8);
        assert_eq!(f.reuse, 0);
    }

    #[test]
    fn skip_costs_only_reuse() {
        let m = FlopsModel { d: 4, d_ffn: 16, channels: 4 };
        let f = step_flops(&m, 0, 64, 0, 32);
        assert_eq!(f.compute_total(), 0);
        assert_eq!(f.reuse, 128);
    }

    #[test]
    fn half_active_halves_attention() {
        let m = FlopsModel { d: 4, d_ffn: 16, channels: 4 };
        let full = step_flops(&m, 32, 96, 32, 32);
        let half = step_flops(&m, 16, 96, 16, 32);
        assert_eq!(2 * half.attention, full.attention);
        assert_eq!(2 * half.ffn_gemm, full.ffn_gemm);
    }
}
