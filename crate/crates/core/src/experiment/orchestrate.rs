//! Runs every configured policy on every seed and persists the results.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{generate_moving_blob, Scenario, VelocityField};
use crate::policy::{run_denoise, PolicyConfig, PolicyKind, RunOutput};
use crate::trace::write_trace;

use super::config::ExperimentConfig;
use super::report::{build_summary, Summary};

/// Narrows a config to one seed and/or one policy kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunFilter {
    pub seed: Option<u64>,
    pub policy: Option<PolicyKind>,
}

impl RunFilter {
    pub fn seeds(&self, cfg: &ExperimentConfig) -> Vec<u64> {
        match self.seed {
            Some(s) => vec![s],
            None => cfg.seeds.clone(),
        }
    }

    /// `(label, policy)` pairs that pass the filter.
    pub fn policies(&self, cfg: &ExperimentConfig) -> Result<Vec<(String, PolicyConfig)>> {
        let out: Vec<_> = labelled_policies(cfg)
            .into_iter()
            .filter(|(_, p)| self.policy.is_none_or(|k| p.kind == k))
            .collect();
        if out.is_empty() {
            return Err(Error::config("policies", "no configured policy matches the filter"));
        }
        Ok(out)
    }
}

/// Policy names, suffixed with their config index when a kind repeats.
pub fn labelled_policies(cfg: &ExperimentConfig) -> Vec<(String, PolicyConfig)> {
    cfg.policies
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let repeated = cfg.policies.iter().filter(|q| q.kind == p.kind).count() > 1;
            let label = if repeated {
                format!("{}-{i}", p.kind.name())
            } else {
                p.kind.name().to_string()
            };
            (label, p.clone())
        })
        .collect()
}

/// Scenario and field for one seed.
pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<(Scenario, Arc<dyn VelocityField>)> {
    let scenario = generate_moving_blob(&cfg.scenario, seed)?;
    let field = cfg.field.build(&scenario, seed)?;
    Ok((scenario, field))
}

/// One policy on a prepared scenario, with the config hash stamped in.
pub fn run_policy(
    cfg: &ExperimentConfig,
    policy: &PolicyConfig,
    seed: u64,
    scenario: &Scenario,
    field: &dyn VelocityField,
) -> Result<RunOutput> {
    let mut out = run_denoise(policy, field, scenario, &cfg.schedule, &cfg.run_options(seed))?;
    out.trace.header.config_hash = cfg.hash();
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub label: String,
    pub policy: PolicyConfig,
    pub output: RunOutput,
}

#[derive(Debug, Clone)]
pub struct SeedRuns {
    pub seed: u64,
    pub scenario_hash: String,
    pub runs: Vec<PolicyRun>,
}

pub fn run_experiment(cfg: &ExperimentConfig, filter: &RunFilter) -> Result<Vec<SeedRuns>> {
    let policies = filter.policies(cfg)?;
    filter
        .seeds(cfg)
        .into_iter()
        .map(|seed| {
            let (scenario, field) = prepare(cfg, seed)?;
            let runs = policies
                .iter()
                .map(|(label, p)| {
                    log::info!("seed {seed}: running {label}");
                    Ok(PolicyRun {
                        label: label.clone(),
                        policy: p.clone(),
                        output: run_policy(cfg, p, seed, &scenario, field.as_ref())?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SeedRuns {
                seed,
                scenario_hash: scenario.digest(),
                runs,
            })
        })
        .collect()
}

pub fn trace_path(out_dir: &Path, seed: u64, label: &str) -> PathBuf {
    out_dir.join("traces").join(format!("seed{seed}_{label}.mctr"))
}

/// Writes one trace per run plus `summary.json`; returns the summary.
pub fn write_experiment(cfg: &ExperimentConfig, results: &[SeedRuns], out_dir: &Path) -> Result<Summary> {
    std::fs::create_dir_all(out_dir.join("traces"))?;
    for s in results {
        for r in &s.runs {
            write_trace(&trace_path(out_dir, s.seed, &r.label), &r.output.trace)?;
        }
    }
    let summary = build_summary(cfg, results)?;
    std::fs::write(out_dir.join("summary.json"), summary.to_json())?;
    Ok(summary)
}
