use crate::error::{Error, Result};
use crate::tensor::{Tensor, TokenMask};

use super::{check_mask, sigma_at, EvalContext, FieldKind, SparseVelocity, VelocityField};

/// Exact conditional velocity of the straight-line flow toward known data.
///
/// `v(x, t) = (x − x_data) / σ(t)`. On the interpolation path
/// `x = (1 − σ)·x_data + σ·x_noise` this is the constant `x_noise − x_data`,
/// so Euler integration stays on the straight line.
#[derive(Debug, Clone)]
pub struct RectifiedOracle {
    data: Vec<Tensor>,
}

impl RectifiedOracle {
    pub fn new(data: Vec<Tensor>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("oracle needs at least one data chunk"));
        }
        Ok(RectifiedOracle { data })
    }

    fn target(&self, x: &Tensor, chunk: usize) -> Result<&Tensor> {
        let d = self
            .data
            .get(chunk)
            .ok_or_else(|| Error::invalid(format!("oracle has no data for chunk {chunk}")))?;
        x.ensure_same_shape(d, "rectified oracle")?;
        Ok(d)
    }
}

impl VelocityField for RectifiedOracle {
    fn kind(&self) -> FieldKind {
        FieldKind::RectifiedOracle
    }

    fn eval_full(&self, x: &Tensor, ctx: &EvalContext<'_>) -> Result<Tensor> {
        let sigma = sigma_at(ctx)?;
        let d = self.target(x, ctx.chunk)?;
        x.zip_map(d, "rectified oracle", |a, b| (a - b) / sigma)
    }

    fn eval_sparse(&self, x: &Tensor, ctx: &EvalContext<'_>, mask: &TokenMask) -> Result<SparseVelocity> {
        let active = check_mask(x, mask)?;
        let sigma = sigma_at(ctx)?;
        let d = self.target(x, ctx.chunk)?;
        let data = active
            .iter()
            .flat_map(|&p| x.token(p).iter().zip(d.token(p)).map(|(a, b)| (a - b) / sigma))
            .collect();
        Ok(SparseVelocity {
            tokens: active,
            channels: x.shape().channels,
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward_interpolate, NoiseSchedule};
    use crate::tensor::Shape;

    #[test]
    fn equal_endpoints_give_zero_velocity() {
        let shape = Shape::new(2, 2, 2, 3).unwrap();
        let d = Tensor::new(shape, (0..shape.len()).map(|i| i as f64 * 0.1).collect()).unwrap();
        let sched = NoiseSchedule::new(10, 1).unwrap();
        let oracle = RectifiedOracle::new(vec![d.clone()]).unwrap();
        let x = forward_interpolate(&d, &d, 7, &sched).unwrap();
        let v = oracle.eval_full(&x, &EvalContext::new(0, 7, &sched)).unwrap();
        assert!(v.data().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn velocity_on_path_is_noise_minus_data() {
        let shape = Shape::new(1, 2, 2, 2).unwrap();
        let d = Tensor::new(shape, vec![1.0, -1.0, 0.5, 2.0, 0.0, 0.25, -0.75, 1.5]).unwrap();
        let n = Tensor::new(shape, vec![0.3, 0.1, -2.0, 1.0, 0.9, -0.4, 0.2, 0.0]).unwrap();
        let sched = NoiseSchedule::new(8, 1).unwrap();
        let oracle = RectifiedOracle::new(vec![d.clone()]).unwrap();
        for t in 1..=8 {
            let x = forward_interpolate(&d, &n, t, &sched).unwrap();
            let v = oracle.eval_full(&x, &EvalContext::new(0, t, &sched)).unwrap();
            for i in 0..shape.len() {
                assert!((v.data()[i] - (n.data()[i] - d.data()[i])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sparse_rows_are_full_rows() {
        let shape = Shape::new(2, 2, 2, 2).unwrap();
        let d = Tensor::new(shape, (0..16).map(|i| (i as f64).sin()).collect()).unwrap();
        let x = Tensor::new(shape, (0..16).map(|i| (i as f64).cos()).collect()).unwrap();
        let sched = NoiseSchedule::new(4, 1).unwrap();
        let oracle = RectifiedOracle::new(vec![d]).unwrap();
        let ctx = EvalContext::new(0, 3, &sched);
        let full = oracle.eval_full(&x, &ctx).unwrap();
        let mask = TokenMask::from_indices(8, &[1, 6]).unwrap();
        let sparse = oracle.eval_sparse(&x, &ctx, &mask).unwrap();
        assert_eq!(sparse.row(0), full.token(1));
        assert_eq!(sparse.row(1), full.token(6));
        assert!(oracle.eval_sparse(&x, &ctx, &TokenMask::none(8)).is_err());
    }
}
