//! Deterministic JSON summary of an experiment.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{flops_account, video_quality, StepFlops};
use crate::error::Result;
use crate::policy::{PolicyKind, StepMode};
use crate::tensor::Tensor;

use super::config::ExperimentConfig;
use super::orchestrate::SeedRuns;

/// SHA-256 over the little-endian bytes of every chunk, in order.
pub fn latents_digest(latents: &[Tensor]) -> String {
    let mut h = Sha256::new();
    for t in latents {
        h.update(t.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub seed: u64,
    pub policy: String,
    pub kind: PolicyKind,
    pub scenario_hash: String,
    pub full_steps: u64,
    pub skip_steps: u64,
    pub sparse_steps: u64,
    pub token_forwards: u64,
    /// Token forwards over those of computing every token at every step.
    pub active_token_ratio: f64,
    pub flops: StepFlops,
    pub degenerate: bool,
    pub output_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub seed: u64,
    pub policy: String,
    pub mse: f64,
    /// `None` when the outputs are identical (infinite PSNR).
    pub psnr: Option<f64>,
    pub ssim: f64,
    /// Compute FLOPs relative to the vanilla run on the same seed.
    pub flops_ratio: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub runs: Vec<RunRow>,
    /// Empty unless a vanilla run is present to compare against.
    pub quality: Vec<QualityRow>,
}

impl Summary {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}

pub fn build_summary(cfg: &ExperimentConfig, results: &[SeedRuns]) -> Result<Summary> {
    let model = cfg.flops_model();
    let mut runs = Vec::new();
    let mut quality = Vec::new();
    for s in results {
        let vanilla = s.runs.iter().find(|r| r.policy.kind == PolicyKind::Vanilla);
        let vanilla_flops = vanilla.map(|v| flops_account(&v.output.trace, &model).total.compute_total());
        for r in &s.runs {
            let trace = &r.output.trace;
            let ledger = flops_account(trace, &model);
            let count = |m: StepMode| trace.steps().filter(|x| x.mode == m).count() as u64;
            let full_work: u64 = trace.steps().map(|x| u64::from(x.tokens)).sum();
            let token_forwards = trace.token_forwards();
            runs.push(RunRow {
                seed: s.seed,
                policy: r.label.clone(),
                kind: r.policy.kind,
                scenario_hash: s.scenario_hash.clone(),
                full_steps: count(StepMode::FullCompute),
                skip_steps: count(StepMode::FullSkip),
                sparse_steps: count(StepMode::TokenSparse),
                token_forwards,
                active_token_ratio: token_forwards as f64 / full_work.max(1) as f64,
                flops: ledger.total,
                degenerate: trace.header.degenerate,
                output_digest: latents_digest(&r.output.final_latents),
            });
            if let (Some(v), Some(vf)) = (vanilla, vanilla_flops) {
                if r.policy.kind == PolicyKind::Vanilla {
                    continue;
                }
                let q = video_quality(&v.output.final_latents, &r.output.final_latents, None)?;
                let own = ledger.total.compute_total();
                quality.push(QualityRow {
                    seed: s.seed,
                    policy: r.label.clone(),
                    mse: q.mse,
                    psnr: q.psnr.is_finite().then_some(q.psnr),
                    ssim: q.ssim,
                    flops_ratio: own as f64 / vf.max(1) as f64,
                    speedup: vf as f64 / own.max(1) as f64,
                });
            }
        }
    }
    Ok(Summary {
        config_hash: cfg.hash(),
        runs,
        quality,
    })
}
