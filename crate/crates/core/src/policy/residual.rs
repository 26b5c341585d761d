//! Residual caching: `R = v − x`, reused as `ṽ = x + R`.

use crate::error::{Error, Result};
use crate::field::SparseVelocity;
use crate::tensor::{Shape, Tensor};

pub fn compute_residual(v: &Tensor, x: &Tensor) -> Result<Tensor> {
    v.zip_map(x, "compute_residual", |a, b| a - b)
}

pub fn approximate_with_cache(x_next: &Tensor, cached_r: &Tensor) -> Result<Tensor> {
    x_next.zip_map(cached_r, "approximate_with_cache", |a, b| a + b)
}

/// `‖x_t − x_prev‖₁ / ‖x_prev‖₁`; `+∞` when `x_prev` is all zeros.
pub fn relative_l1(x_t: &Tensor, x_prev: &Tensor) -> Result<f64> {
    x_t.ensure_same_shape(x_prev, "relative_l1")?;
    let den = x_prev.l1_norm();
    let num: f64 = x_t.data().iter().zip(x_prev.data()).map(|(a, b)| (a - b).abs()).sum();
    if den == 0.0 {
        log::warn!("relative_l1: previous latent has zero L1 norm; forcing a compute");
        return Ok(f64::INFINITY);
    }
    Ok(num / den)
}

/// Per-token residuals plus the timestep each token was last computed at.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualCache {
    residual: Tensor,
    computed_at: Vec<Option<usize>>,
}

impl ResidualCache {
    pub fn new(shape: Shape) -> Self {
        ResidualCache {
            residual: Tensor::zeros(shape),
            computed_at: vec![None; shape.tokens()],
        }
    }

    pub fn residual(&self) -> &Tensor {
        &self.residual
    }

    pub fn computed_at(&self, p: usize) -> Option<usize> {
        self.computed_at[p]
    }

    pub fn is_complete(&self) -> bool {
        self.computed_at.iter().all(Option::is_some)
    }

    /// Stores `v − x` for every token.
    pub fn store_full(&mut self, v: &Tensor, x: &Tensor, t: usize) -> Result<()> {
        self.residual = compute_residual(v, x)?;
        self.computed_at.iter_mut().for_each(|c| *c = Some(t));
        Ok(())
    }

    /// Stores `v − x` for the rows of a sparse evaluation.
    pub fn store_rows(&mut self, v: &SparseVelocity, x: &Tensor, t: usize) -> Result<()> {
        x.ensure_same_shape(&self.residual, "residual cache")?;
        for (r, &p) in v.tokens.iter().enumerate() {
            let xr = x.token(p);
            for ((dst, a), b) in self.residual.token_mut(p).iter_mut().zip(v.row(r)).zip(xr) {
                *dst = a - b;
            }
            self.computed_at[p] = Some(t);
        }
        Ok(())
    }

    /// `x + R` for the whole chunk.
    pub fn approximate(&self, x: &Tensor) -> Result<Tensor> {
        if let Some(p) = self.computed_at.iter().position(Option::is_none) {
            return Err(Error::state(format!("token {p} has no cached residual")));
        }
        approximate_with_cache(x, &self.residual)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vec1(v: Vec<f64>) -> Tensor {
        let n = v.len();
        Tensor::new(Shape::new(1, 1, n, 1).unwrap(), v).unwrap()
    }

    #[test]
    fn residual_examples() {
        let x = vec1(vec![1.0, 2.0]);
        assert!(compute_residual(&x, &x).unwrap().data().iter().all(|&r| r == 0.0));
        assert_eq!(compute_residual(&vec1(vec![3.0]), &vec1(vec![1.0])).unwrap().data(), &[2.0]);
        assert!(compute_residual(&vec1(vec![3.0]), &x).is_err());
    }

    #[test]
    fn zero_residual_reuses_latent() {
        let x = vec1(vec![0.5, -1.0, 4.0]);
        assert_eq!(approximate_with_cache(&x, &Tensor::zeros(x.shape())).unwrap(), x);
    }

    #[test]
    fn relative_l1_examples() {
        let a = vec1(vec![2.0, 2.0]);
        let b = vec1(vec![1.0, 1.0]);
        assert_eq!(relative_l1(&b, &b).unwrap(), 0.0);
        assert_eq!(relative_l1(&a, &b).unwrap(), 1.0);
        assert_eq!(relative_l1(&vec1(vec![1.0, 3.0]), &a).unwrap(), 0.5);
        assert_eq!(relative_l1(&a, &vec1(vec![0.0, 0.0])).unwrap(), f64::INFINITY);
    }

    #[test]
    fn unfilled_cache_is_a_state_error() {
        let shape = Shape::new(1, 1, 3, 1).unwrap();
        let mut cache = ResidualCache::new(shape);
        let x = Tensor::filled(shape, 1.0);
        assert!(matches!(cache.approximate(&x), Err(Error::State(_))));
        let v = SparseVelocity {
            tokens: vec![0, 2],
            channels: 1,
            data: vec![3.0, 5.0],
        };
        cache.store_rows(&v, &x, 7).unwrap();
        assert!(!cache.is_complete());
        assert_eq!(cache.computed_at(2), Some(7));
        assert_eq!(cache.computed_at(1), None);
    }

    proptest! {
        // Floating-point subtraction then addition can differ from v by an ulp.
        #[test]
        fn residual_round_trip(v in prop::collection::vec(-1e3f64..1e3, 1..16), seed in 0u64..1000) {
            let x: Vec<f64> = v.iter().enumerate().map(|(i, a)| a * 0.3 + (i as f64 + seed as f64).sin()).collect();
            let vt = vec1(v.clone());
            let xt = vec1(x);
            let mut cache = ResidualCache::new(vt.shape());
            cache.store_full(&vt, &xt, 3).unwrap();
            let back = cache.approximate(&xt).unwrap();
            for (a, b) in back.data().iter().zip(vt.data()) {
                let scale = a.abs().max(b.abs()).max(xt.data().iter().fold(0.0f64, |m, x| m.max(x.abs())));
                prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * scale);
            }
        }
    }
}
