//! Motion importance, soft weights, accumulation and thresholding.

use crate::error::{Error, Result};
use crate::tensor::{Tensor, TokenMask};

fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Frame-difference importance `M` over the `F·H·W` tokens of a chunk.
///
/// `x` is the chunk latent of the previous step. Frame `f > 0` compares with
/// frame `f − 1`. Frame 0 of chunk `i > 0` compares with `prev_last_frame`,
/// the last frame of chunk `i − 1` at the same noise level (`H·W·C`). Frame 0
/// of chunk 0 copies frame 1, or becomes all ones when the chunk has a
/// single frame.
pub fn importance_map(x: &Tensor, prev_last_frame: Option<&[f64]>, chunk: usize) -> Result<Vec<f64>> {
    let shape = x.shape();
    let hw = shape.tokens_per_frame();
    let c = shape.channels;
    let mut m = vec![0.0; shape.tokens()];
    for f in 1..shape.frames {
        let (cur, prev) = (x.frame(f), x.frame(f - 1));
        for q in 0..hw {
            m[f * hw + q] = l1_diff(&cur[q * c..(q + 1) * c], &prev[q * c..(q + 1) * c]);
        }
    }
    if chunk > 0 {
        let reference = prev_last_frame
            .ok_or_else(|| Error::invalid(format!("chunk {chunk} needs the previous chunk's last frame")))?;
        if reference.len() != hw * c {
            return Err(Error::invalid("reference frame size differs from the chunk frame"));
        }
        let cur = x.frame(0);
        for q in 0..hw {
            m[q] = l1_diff(&cur[q * c..(q + 1) * c], &reference[q * c..(q + 1) * c]);
        }
    } else if shape.frames > 1 {
        let (head, tail) = m.split_at_mut(hw);
        head.copy_from_slice(&tail[..hw]);
    } else {
        m.iter_mut().for_each(|v| *v = 1.0);
    }
    Ok(m)
}

/// Min-max projection of one frame's importance onto `[α, 1]`.
pub fn soft_map(m_frame: &[f64], alpha: f64, eps: f64) -> Vec<f64> {
    let lo = m_frame.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m_frame.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let den = hi - lo + eps;
    m_frame.iter().map(|&v| alpha + (1.0 - alpha) * ((v - lo) / den)).collect()
}

/// [`soft_map`] applied to each frame of a chunk-wide map.
pub fn soft_map_frames(m: &[f64], tokens_per_frame: usize, alpha: f64, eps: f64) -> Vec<f64> {
    m.chunks(tokens_per_frame).flat_map(|frame| soft_map(frame, alpha, eps)).collect()
}

/// `A[p] += W[p] · Δ`.
pub fn accumulate(a: &mut [f64], w: &[f64], delta: f64) -> Result<()> {
    if a.len() != w.len() {
        return Err(Error::invalid("accumulator and weight map differ in length"));
    }
    if !(delta >= 0.0) {
        return Err(Error::invalid(format!("accumulated delta must be >= 0, got {delta}")));
    }
    for (ai, wi) in a.iter_mut().zip(w) {
        *ai += wi * delta;
    }
    Ok(())
}

/// Selects tokens with `A > τ` and resets them to zero.
pub fn threshold_mask(a: &mut [f64], tau: f64) -> TokenMask {
    let bits = a
        .iter_mut()
        .map(|v| {
            let hit = *v > tau;
            if hit {
                *v = 0.0;
            }
            hit
        })
        .collect();
    TokenMask::from_bits(bits)
}

/// Per-token crossing counts when a fixed `(W, Δ)` sequence is replayed
/// through [`accumulate`] and [`threshold_mask`] from a uniform start.
pub fn replay_crossings(weights: &[Vec<f64>], deltas: &[f64], initial: f64, tau: f64) -> Result<Vec<usize>> {
    if weights.len() != deltas.len() {
        return Err(Error::invalid("weight and delta sequences differ in length"));
    }
    let Some(first) = weights.first() else { return Ok(Vec::new()) };
    let mut a = vec![initial; first.len()];
    let mut counts = vec![0usize; first.len()];
    for (w, &d) in weights.iter().zip(deltas) {
        accumulate(&mut a, w, d)?;
        for (c, hit) in counts.iter_mut().zip(threshold_mask(&mut a, tau).bits()) {
            *c += usize::from(*hit);
        }
    }
    Ok(counts)
}

/// Token-level state carried through the sparse phase of one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceState {
    pub importance: Vec<f64>,
    pub weights: Vec<f64>,
    pub accumulator: Vec<f64>,
    pub mask: TokenMask,
    pub eps: f64,
}

impl ImportanceState {
    /// Starts every token's accumulator at `initial`.
    pub fn new(tokens: usize, initial: f64, eps: f64) -> Self {
        ImportanceState {
            importance: vec![0.0; tokens],
            weights: vec![1.0; tokens],
            accumulator: vec![initial; tokens],
            mask: TokenMask::none(tokens),
            eps,
        }
    }

    /// One accumulate-and-threshold round; an infinite `delta` selects all.
    pub fn step(&mut self, importance: Vec<f64>, tokens_per_frame: usize, alpha: f64, delta: f64, tau: f64) -> Result<&TokenMask> {
        self.weights = soft_map_frames(&importance, tokens_per_frame, alpha, self.eps);
        self.importance = importance;
        if delta.is_infinite() {
            self.accumulator.iter_mut().for_each(|a| *a = 0.0);
            self.mask = TokenMask::all(self.accumulator.len());
        } else {
            accumulate(&mut self.accumulator, &self.weights, delta)?;
            self.mask = threshold_mask(&mut self.accumulator, tau);
        }
        Ok(&self.mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use proptest::prelude::*;

    #[test]
    fn identical_frames_have_zero_importance() {
        let shape = Shape::new(3, 2, 2, 2).unwrap();
        let x = Tensor::filled(shape, 0.7);
        assert!(importance_map(&x, None, 0).unwrap().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn single_token_change_and_frame_zero_copy() {
        let shape = Shape::new(2, 2, 2, 1).unwrap();
        let mut data = vec![0.0; 8];
        data[4 + 3] = 1.0;
        let m = importance_map(&Tensor::new(shape, data).unwrap(), None, 0).unwrap();
        assert_eq!(&m[4..], &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(&m[..4], &m[4..]);
    }

    #[test]
    fn later_chunk_compares_with_reference_frame() {
        let shape = Shape::new(2, 1, 2, 2).unwrap();
        let x = Tensor::new(shape, vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let reference = [0.0, -1.0, 0.0, 0.5];
        let m = importance_map(&x, Some(&reference), 1).unwrap();
        assert_eq!(m, vec![3.0, 0.5, 0.0, 0.0]);
        assert!(importance_map(&x, None, 1).is_err());
    }

    #[test]
    fn single_frame_first_chunk_is_uniform() {
        let x = Tensor::new(Shape::new(1, 1, 3, 1).unwrap(), vec![1.0, 5.0, 2.0]).unwrap();
        assert_eq!(importance_map(&x, None, 0).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn soft_map_examples() {
        let w = soft_map(&[0.0, 5.0, 10.0], 0.6, 0.0);
        for (a, b) in w.iter().zip([0.6, 0.8, 1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let w = soft_map(&[0.0, 5.0, 10.0], 0.6, 1e-6);
        assert!((w[2] - 1.0).abs() < 1e-7);
        assert!(soft_map(&[3.0; 4], 0.3, 1e-6).iter().all(|&v| v == 0.3));
        assert!(soft_map(&[0.0, 1.0, 9.0], 1.0, 1e-6).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn accumulate_examples() {
        let mut a = vec![0.3];
        accumulate(&mut a, &[0.5], 0.2).unwrap();
        assert!((a[0] - 0.4).abs() < 1e-15);
        let before = a.clone();
        accumulate(&mut a, &[0.5], 0.0).unwrap();
        assert_eq!(a, before);
        assert!(accumulate(&mut a, &[0.5], -0.1).is_err());
        let mut u = vec![0.1, 0.2, 0.3];
        accumulate(&mut u, &[1.0; 3], 0.5).unwrap();
        assert_eq!(u, vec![0.1 + 0.5, 0.2 + 0.5, 0.3 + 0.5]);
    }

    #[test]
    fn threshold_examples() {
        let mut a = vec![0.41, 0.4, 0.0];
        let mask = threshold_mask(&mut a, 0.4);
        assert_eq!(mask.bits(), &[true, false, false]);
        assert_eq!(a, vec![0.0, 0.4, 0.0]);
        let mut z = vec![0.0; 5];
        assert!(threshold_mask(&mut z, 0.1).is_none());
    }

    #[test]
    fn replay_counts_crossings() {
        let w = vec![vec![1.0, 0.5]; 4];
        let d = [0.15; 4];
        // token 0: 0.15, 0.30, 0.45 > 0.4 (reset), 0.15; token 1 never exceeds
        assert_eq!(replay_crossings(&w, &d, 0.0, 0.4).unwrap(), vec![1, 0]);
        assert_eq!(replay_crossings(&w, &d, 0.3, 0.4).unwrap(), vec![2, 1]);
        assert!(replay_crossings(&w, &d[..3], 0.0, 0.4).is_err());
        assert!(replay_crossings(&[], &[], 0.0, 0.4).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn replay_is_monotone_in_tau(
            seq in prop::collection::vec((prop::collection::vec(0.0f64..=1.0, 6), 0.0f64..0.5), 1..60),
            initial in 0.0f64..0.3,
            t1 in 0.001f64..1.0,
            t2 in 0.001f64..1.0,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let (w, d): (Vec<_>, Vec<_>) = seq.into_iter().unzip();
            let a = replay_crossings(&w, &d, initial, lo).unwrap();
            let b = replay_crossings(&w, &d, initial, hi).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(x >= y);
            }
        }

        #[test]
        fn weights_within_bounds_and_order_preserved(
            m in prop::collection::vec(0.0f64..100.0, 2..40),
            alpha in 0.0f64..=1.0,
        ) {
            let w = soft_map(&m, alpha, 1e-6);
            for &v in &w {
                prop_assert!(v >= alpha - 1e-12 && v <= 1.0 + 1e-12);
            }
            if alpha < 1.0 {
                for i in 0..m.len() {
                    for j in 0..m.len() {
                        if m[i] < m[j] {
                            prop_assert!(w[i] < w[j]);
                        }
                    }
                }
            }
        }

        #[test]
        fn mask_reset_exclusive(a in prop::collection::vec(0.0f64..2.0, 1..40), tau in 0.01f64..1.5) {
            let mut acc = a.clone();
            let mask = threshold_mask(&mut acc, tau);
            for p in 0..a.len() {
                prop_assert!(!(mask.get(p) && acc[p] > 0.0));
                prop_assert_eq!(mask.get(p), a[p] > tau);
            }
        }

        #[test]
        fn uniform_weights_keep_accumulator_flat(deltas in prop::collection::vec(0.0f64..0.3, 1..30), tau in 0.05f64..0.5) {
            let m: Vec<f64> = (0..12).map(|i| (i * 7 % 5) as f64).collect();
            let mut state = ImportanceState::new(12, 0.0, 1e-6);
            for d in deltas {
                let mask = state.step(m.clone(), 4, 1.0, d, tau).unwrap().clone();
                prop_assert!(mask.is_all() || mask.is_none());
                prop_assert!(state.accumulator.iter().all(|&a| a == state.accumulator[0]));
            }
        }
    }
}
