//! Ablation sweeps over one policy parameter, and compute matching.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{flops_account, video_quality};
use crate::error::{Error, Result};
use crate::field::{Scenario, VelocityField};
use crate::policy::{PolicyConfig, PolicyKind, RunOutput};

use super::config::ExperimentConfig;
use super::orchestrate::{prepare, run_policy, RunFilter};
use super::report::latents_digest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Alpha,
    K,
    Tau,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "alpha" => Ok(SweepParam::Alpha),
            "k" => Ok(SweepParam::K),
            "tau" => Ok(SweepParam::Tau),
            _ => Err(Error::invalid(format!("unknown sweep parameter `{s}` (alpha, k, tau)"))),
        }
    }

    fn apply(self, base: &PolicyConfig, value: f64) -> Result<PolicyConfig> {
        let mut p = base.clone();
        match self {
            SweepParam::Alpha => p.alpha = value,
            SweepParam::Tau => p.tau = value,
            SweepParam::K => {
                if value < 0.0 || value.fract() != 0.0 || !value.is_finite() {
                    return Err(Error::invalid(format!("K must be a non-negative integer, got {value}")));
                }
                p.k = value as usize;
            }
        }
        p.validate()?;
        Ok(p)
    }
}

/// One CSV row. `value` is the swept value, or `vanilla` / `chunk-level`
/// for the reference rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub seed: u64,
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
    pub flops: u64,
    pub token_forwards: u64,
    pub output_digest: String,
}

/// The policy a sweep varies: the first motioncache entry, else the first
/// caching one.
fn target_policy(cfg: &ExperimentConfig, filter: &RunFilter) -> Result<PolicyConfig> {
    let candidates = filter.policies(cfg)?;
    let pick = candidates
        .iter()
        .find(|(_, p)| p.kind == PolicyKind::MotionCache)
        .or_else(|| candidates.iter().find(|(_, p)| p.kind != PolicyKind::Vanilla))
        .ok_or_else(|| Error::invalid("sweeps need a caching policy in the config"))?;
    Ok(pick.1.clone())
}

pub fn sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[f64], filter: &RunFilter) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    let target = target_policy(cfg, filter)?;
    if param == SweepParam::Alpha && target.kind != PolicyKind::MotionCache {
        return Err(Error::invalid(format!("alpha does not apply to {}", target.kind.name())));
    }
    if param == SweepParam::K && !matches!(target.kind, PolicyKind::MotionCache) {
        return Err(Error::invalid(format!("K does not apply to {}", target.kind.name())));
    }
    let policies = values.iter().map(|&v| param.apply(&target, v)).collect::<Result<Vec<_>>>()?;
    let mut baseline = target.clone();
    baseline.kind = PolicyKind::ChunkLevel;
    baseline.tau = target.tau_chunk();
    baseline.tau_chunk = None;
    let vanilla = PolicyConfig::new(PolicyKind::Vanilla);

    let model = cfg.flops_model();
    let mut rows = Vec::new();
    for seed in filter.seeds(cfg) {
        let (scenario, field) = prepare(cfg, seed)?;
        let reference = run_policy(cfg, &vanilla, seed, &scenario, field.as_ref())?;
        let row = |value: String, out: &RunOutput| -> Result<SweepRow> {
            let q = video_quality(&reference.final_latents, &out.final_latents, None)?;
            Ok(SweepRow {
                value,
                seed,
                psnr: q.psnr,
                ssim: q.ssim,
                mse: q.mse,
                flops: flops_account(&out.trace, &model).total.compute_total(),
                token_forwards: out.trace.token_forwards(),
                output_digest: latents_digest(&out.final_latents),
            })
        };
        rows.push(row("vanilla".into(), &reference)?);
        let base = run_policy(cfg, &baseline, seed, &scenario, field.as_ref())?;
        rows.push(row("chunk-level".into(), &base)?);
        for (v, p) in values.iter().zip(&policies) {
            let out = run_policy(cfg, p, seed, &scenario, field.as_ref())?;
            rows.push(row(format!("{v}"), &out)?);
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// A run whose τ was tuned to hit a token-forward budget.
#[derive(Debug, Clone)]
pub struct MatchedRun {
    pub tau: f64,
    pub output: RunOutput,
    pub evaluations: usize,
}

/// Bisects `policy.tau` in log space (τ_chunk held fixed) until the run's
/// token forwards are within `rel_tol` of `target`.
pub fn match_token_forwards(
    cfg: &ExperimentConfig,
    policy: &PolicyConfig,
    seed: u64,
    scenario: &Scenario,
    field: &dyn VelocityField,
    target: u64,
    rel_tol: f64,
) -> Result<MatchedRun> {
    let mut p = policy.clone();
    p.tau_chunk = Some(policy.tau_chunk());
    let goal = target as f64;
    let (mut lo, mut hi) = (1e-6f64.ln(), 1e3f64.ln());
    for evaluations in 1..=60 {
        let mid = 0.5 * (lo + hi);
        p.tau = mid.exp();
        let out = run_policy(cfg, &p, seed, scenario, field)?;
        let got = out.trace.token_forwards() as f64;
        if (got - goal).abs() <= rel_tol * goal {
            return Ok(MatchedRun {
                tau: p.tau,
                output: out,
                evaluations,
            });
        }
        // Larger τ means fewer recomputations.
        if got > goal {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::InsufficientData(format!(
        "no τ in [1e-6, 1e3] brings token forwards within {rel_tol} of {target}"
    )))
}
