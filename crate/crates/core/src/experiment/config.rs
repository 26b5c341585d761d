//! Experiment configuration: JSON in, canonical hash out.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::FlopsModel;
use crate::error::{Error, Result};
use crate::field::{FieldSpec, MovingBlobParams};
use crate::model::NoiseSchedule;
use crate::policy::{PolicyConfig, PolicyKind, RunOptions};
use crate::trace::{KvRefresh, Verbosity};

fn default_schedule() -> NoiseSchedule {
    NoiseSchedule::new(30, 2).expect("valid default schedule")
}

fn default_policies() -> Vec<PolicyConfig> {
    PolicyKind::ALL.into_iter().map(PolicyConfig::new).collect()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Everything needed to reproduce a set of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: MovingBlobParams,
    #[serde(default)]
    pub field: FieldSpec,
    #[serde(default = "default_schedule")]
    pub schedule: NoiseSchedule,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicyConfig>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub verbosity: Verbosity,
    #[serde(default)]
    pub kv_refresh: KvRefresh,
    /// Paired true/cached probes every this many global steps; 0 disables.
    #[serde(default)]
    pub probe_every: usize,
    /// Cost-model widths; defaults to `d = C` and `d_ffn` = the field's hidden width.
    #[serde(default)]
    pub flops: Option<FlopsModel>,
    /// Where traces and reports go. Not part of the hash.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    /// Parses and validates JSON text. Errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path.is_empty() { ".".to_string() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate().map_err(|e| nest("scenario", e))?;
        self.schedule.validate().map_err(|e| nest("schedule", e))?;
        if self.policies.is_empty() {
            return Err(Error::config("policies", "at least one policy is required"));
        }
        for (i, p) in self.policies.iter().enumerate() {
            p.validate().map_err(|e| nest(&format!("policies[{i}]"), e))?;
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if let Some(f) = &self.flops {
            if f.d == 0 || f.d_ffn == 0 || f.channels == 0 {
                return Err(Error::config("flops", "widths must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn flops_model(&self) -> FlopsModel {
        self.flops.unwrap_or_else(|| {
            let c = self.scenario.channels;
            FlopsModel {
                d: c,
                d_ffn: self.field.hidden_width(c),
                channels: c,
            }
        })
    }

    pub fn run_options(&self, seed: u64) -> RunOptions {
        let mut o = RunOptions::new(self.flops_model());
        o.verbosity = self.verbosity;
        o.kv_refresh = self.kv_refresh;
        o.probe_every = self.probe_every;
        o.seed = seed;
        o
    }

    /// Canonical JSON: defaults filled in, keys sorted, `output_dir` dropped.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let serde_json::Value::Object(m) = &mut v {
            m.remove("output_dir");
        }
        // serde_json's map is ordered by key, so this is canonical.
        v.to_string()
    }

    /// SHA-256 of [`canonical_json`](Self::canonical_json), hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

fn nest(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { path, message } => Error::config(format!("{prefix}.{path}"), message),
        other => Error::config(prefix, other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default_config() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.policies.len(), 4);
        assert_eq!(cfg.schedule.total_steps, 30);
    }

    #[test]
    fn hash_ignores_formatting_order_and_output_dir() {
        let a = ExperimentConfig::from_json(r#"{"seeds":[1,2],"verbosity":"latents"}"#).unwrap();
        let b = ExperimentConfig::from_json("{\n  \"verbosity\" : \"latents\",\n \"output_dir\": \"x\", \"seeds\": [1, 2]\n}").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::from_json(r#"{"seeds":[1,3],"verbosity":"latents"}"#).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn explicit_defaults_hash_like_omitted_ones() {
        let a = ExperimentConfig::from_json("{}").unwrap();
        let b = ExperimentConfig::from_json(r#"{"schedule":{"total_steps":30,"window":2}}"#).unwrap();
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn parse_errors_carry_the_field_path() {
        let err = ExperimentConfig::from_json(r#"{"policies":[{"kind":"motioncache","alpha":"x"}]}"#).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "policies[0].alpha"),
            e => panic!("unexpected {e}"),
        }
        let err = ExperimentConfig::from_json(r#"{"scenario":{"blob_radius":9.0}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path.starts_with("scenario")), "{err}");
        let err = ExperimentConfig::from_json(r#"{"policies":[{"kind":"motioncache","alpha":2.0}]}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "policies[0].alpha"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"sedes":[1]}"#).is_err());
    }
}
