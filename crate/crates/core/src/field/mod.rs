//! Velocity fields `v(x, t)` the denoising loop integrates.
//!
//! Three backends are provided: an analytic rectified-flow oracle, a
//! channel-mixing linear field, and a single-head attention field with a
//! real key/value cache so sparse token-forward passes can be exercised.

mod attention;
pub mod kv;
mod linear;
mod oracle;
pub mod scenario;

pub use attention::{GuideParams, ToyAttention, ToyAttentionParams};
pub use kv::{KvBlock, KvCache, KvRows};
pub use linear::LinearField;
pub use oracle::RectifiedOracle;
pub use scenario::{generate_moving_blob, MovingBlobParams, Scenario};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NoiseSchedule;
use crate::tensor::{Tensor, TokenMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    RectifiedOracle,
    LinearField,
    ToyAttention,
}

impl FieldKind {
    pub fn name(self) -> &'static str {
        match self {
            FieldKind::RectifiedOracle => "rectified_oracle",
            FieldKind::LinearField => "linear_field",
            FieldKind::ToyAttention => "toy_attention",
        }
    }
}

/// Everything a field may look at besides the chunk latent itself.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub chunk: usize,
    pub t: usize,
    pub sched: &'a NoiseSchedule,
    /// K/V of earlier chunks.
    pub kv: Option<&'a KvCache>,
    /// K/V of the chunk's own tokens. `None` projects them fresh from `x`.
    pub own_kv: Option<&'a KvBlock>,
}

impl<'a> EvalContext<'a> {
    pub fn new(chunk: usize, t: usize, sched: &'a NoiseSchedule) -> Self {
        EvalContext {
            chunk,
            t,
            sched,
            kv: None,
            own_kv: None,
        }
    }

    pub fn with_kv(mut self, kv: &'a KvCache) -> Self {
        self.kv = Some(kv);
        self
    }

    pub fn with_own_kv(mut self, own: &'a KvBlock) -> Self {
        self.own_kv = Some(own);
        self
    }
}

/// Velocity rows for the active tokens of a sparse call, `tokens.len() × C`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVelocity {
    pub tokens: Vec<usize>,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl SparseVelocity {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.channels..(r + 1) * self.channels]
    }
}

pub trait VelocityField: Send + Sync {
    fn kind(&self) -> FieldKind;

    fn eval_full(&self, x: &Tensor, ctx: &EvalContext<'_>) -> Result<Tensor>;

    /// Rows of the velocity for the tokens selected by `mask`.
    fn eval_sparse(&self, x: &Tensor, ctx: &EvalContext<'_>, mask: &TokenMask) -> Result<SparseVelocity>;

    /// Fresh K/V projections of `tokens`; `None` for fields without attention.
    fn project_kv(&self, _x: &Tensor, _t: usize, _sched: &NoiseSchedule, _tokens: &[usize]) -> Option<KvRows> {
        None
    }

    fn uses_kv(&self) -> bool {
        false
    }
}

pub(crate) fn check_mask(x: &Tensor, mask: &TokenMask) -> Result<Vec<usize>> {
    if mask.len() != x.shape().tokens() {
        return Err(Error::invalid(format!(
            "mask covers {} tokens, chunk has {}",
            mask.len(),
            x.shape().tokens()
        )));
    }
    let active = mask.active_indices();
    if active.is_empty() {
        return Err(Error::invalid("sparse evaluation needs at least one active token"));
    }
    Ok(active)
}

pub(crate) fn sigma_at(ctx: &EvalContext<'_>) -> Result<f64> {
    if ctx.t > ctx.sched.total_steps {
        return Err(Error::invalid(format!(
            "timestep {} outside [0, {}]",
            ctx.t, ctx.sched.total_steps
        )));
    }
    let s = ctx.sched.sigma(ctx.t);
    if s <= 0.0 {
        return Err(Error::Numeric("velocity undefined at sigma = 0".into()));
    }
    Ok(s)
}

fn default_hidden() -> usize {
    16
}
fn default_mlp_gain() -> f64 {
    0.03
}
fn default_embed_scale() -> f64 {
    0.5
}
fn default_max_frequency() -> f64 {
    4.0
}
fn default_linear_scale() -> f64 {
    0.5
}

/// Serializable field selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    RectifiedOracle,
    LinearField {
        /// Explicit `C×C` matrix; drawn from the seed when absent.
        #[serde(default)]
        a: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        b: Option<Vec<f64>>,
        #[serde(default = "default_linear_scale")]
        scale: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    ToyAttention {
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default = "default_mlp_gain")]
        mlp_gain: f64,
        #[serde(default = "default_embed_scale")]
        embed_scale: f64,
        #[serde(default = "default_max_frequency")]
        max_frequency: f64,
        /// Conditioning drift toward the scenario data; `null` removes it.
        #[serde(default = "default_guide")]
        guide: Option<GuideParams>,
        #[serde(default)]
        seed: Option<u64>,
    },
}

fn default_guide() -> Option<GuideParams> {
    Some(GuideParams::default())
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::ToyAttention {
            hidden: default_hidden(),
            mlp_gain: default_mlp_gain(),
            embed_scale: default_embed_scale(),
            max_frequency: default_max_frequency(),
            guide: default_guide(),
            seed: None,
        }
    }
}

impl FieldSpec {
    pub fn kind(&self) -> FieldKind {
        match self {
            FieldSpec::RectifiedOracle => FieldKind::RectifiedOracle,
            FieldSpec::LinearField { .. } => FieldKind::LinearField,
            FieldSpec::ToyAttention { .. } => FieldKind::ToyAttention,
        }
    }

    /// Width of the FFN hidden layer, used as the default cost-model width.
    pub fn hidden_width(&self, channels: usize) -> usize {
        match self {
            FieldSpec::ToyAttention { hidden, .. } => *hidden,
            _ => channels,
        }
    }

    /// Instantiates the field for `scenario`; `run_seed` seeds any weights
    /// not pinned by an explicit `seed`.
    pub fn build(&self, scenario: &Scenario, run_seed: u64) -> Result<Arc<dyn VelocityField>> {
        let channels = scenario.shape().channels;
        Ok(match self {
            FieldSpec::RectifiedOracle => Arc::new(RectifiedOracle::new(scenario.data_chunks().to_vec())?),
            FieldSpec::LinearField { a, b, scale, seed } => match (a, b) {
                (Some(a), Some(b)) => Arc::new(LinearField::new(channels, a.concat(), b.clone())?),
                (None, None) => Arc::new(LinearField::random(channels, *scale, seed.unwrap_or(run_seed))),
                _ => return Err(Error::config("field", "linear_field needs both `a` and `b`, or neither")),
            },
            FieldSpec::ToyAttention {
                hidden,
                mlp_gain,
                embed_scale,
                max_frequency,
                guide,
                seed,
            } => {
                let params = ToyAttentionParams {
                    channels,
                    hidden: *hidden,
                    mlp_gain: *mlp_gain,
                    embed_scale: *embed_scale,
                    max_frequency: *max_frequency,
                    seed: seed.unwrap_or(run_seed),
                };
                let field = ToyAttention::new(params)?;
                match guide {
                    Some(g) => Arc::new(field.with_guide(scenario.data_chunks().to_vec(), *g)?),
                    None => Arc::new(field),
                }
            }
        })
    }
}
