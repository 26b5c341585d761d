use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, TokenMask};

use super::scenario::{rng_for, stream};
use super::{check_mask, EvalContext, FieldKind, SparseVelocity, VelocityField};

/// Token-wise affine field `v = A·x + b` with a shared `C×C` matrix.
#[derive(Debug, Clone)]
pub struct LinearField {
    channels: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl LinearField {
    /// `a` is row-major `C×C`.
    pub fn new(channels: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != channels * channels || b.len() != channels {
            return Err(Error::invalid(format!(
                "linear field needs a {channels}x{channels} matrix and {channels} offsets"
            )));
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("linear field coefficients must be finite".into()));
        }
        Ok(LinearField { channels, a, b })
    }

    pub fn random(channels: usize, scale: f64, seed: u64) -> Self {
        let mut rng = rng_for(seed, stream::FIELD, 1);
        let a = (0..channels * channels)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal) / (channels as f64).sqrt())
            .collect();
        let b = (0..channels).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        LinearField { channels, a, b }
    }

    fn apply(&self, token: &[f64], out: &mut Vec<f64>) {
        let c = self.channels;
        for r in 0..c {
            let row = &self.a[r * c..(r + 1) * c];
            out.push(row.iter().zip(token).map(|(w, x)| w * x).sum::<f64>() + self.b[r]);
        }
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.shape().channels != self.channels {
            return Err(Error::invalid(format!(
                "linear field built for {} channels, got {}",
                self.channels,
                x.shape().channels
            )));
        }
        Ok(())
    }
}

impl VelocityField for LinearField {
    fn kind(&self) -> FieldKind {
        FieldKind::LinearField
    }

    fn eval_full(&self, x: &Tensor, _ctx: &EvalContext<'_>) -> Result<Tensor> {
        self.check(x)?;
        let mut out = Vec::with_capacity(x.shape().len());
        for p in 0..x.shape().tokens() {
            self.apply(x.token(p), &mut out);
        }
        Tensor::new(x.shape(), out)
    }

    fn eval_sparse(&self, x: &Tensor, _ctx: &EvalContext<'_>, mask: &TokenMask) -> Result<SparseVelocity> {
        self.check(x)?;
        let active = check_mask(x, mask)?;
        let mut data = Vec::with_capacity(active.len() * self.channels);
        for &p in &active {
            self.apply(x.token(p), &mut data);
        }
        Ok(SparseVelocity {
            tokens: active,
            channels: self.channels,
            data,
        })
    }
}
