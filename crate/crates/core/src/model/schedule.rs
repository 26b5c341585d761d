use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaKind {
    /// `σ(t) = t / T`.
    #[default]
    Linear,
}

/// Discretisation of the flow: `T` steps, a concurrency window `l` and `σ(t)`.
///
/// Integration runs from `t = T` (pure noise, `σ = 1`) down to `t = 0`. Each
/// step moves `σ` by `1/T`, so the signed Euler step is `dt = -1/T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub total_steps: usize,
    pub window: usize,
    #[serde(default)]
    pub sigma: SigmaKind,
}

impl NoiseSchedule {
    pub fn new(total_steps: usize, window: usize) -> Result<Self> {
        let s = NoiseSchedule {
            total_steps,
            window,
            sigma: SigmaKind::Linear,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::invalid("total_steps must be >= 1"));
        }
        if self.window == 0 {
            return Err(Error::invalid("window must be >= 1"));
        }
        if self.window > self.total_steps {
            return Err(Error::invalid(format!(
                "window {} exceeds total_steps {}",
                self.window, self.total_steps
            )));
        }
        Ok(())
    }

    pub fn sigma(&self, t: usize) -> f64 {
        match self.sigma {
            SigmaKind::Linear => t as f64 / self.total_steps as f64,
        }
    }

    /// Signed Euler step from `t` to `t - 1` in `σ` units.
    pub fn dt(&self) -> f64 {
        -1.0 / self.total_steps as f64
    }

    /// Window of 0-based `chunk` on the global step clock.
    pub fn window_of(&self, chunk: usize) -> Result<StepWindow> {
        chunk_window(chunk, self.total_steps, self.window)
    }

    /// Number of global steps needed to fully denoise `chunks` chunks.
    pub fn horizon(&self, chunks: usize) -> Result<usize> {
        if chunks == 0 {
            return Ok(0);
        }
        Ok(self.window_of(chunks - 1)?.start + self.total_steps)
    }
}

/// Closed interval `[start, end]` of global steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepWindow {
    pub start: usize,
    pub end: usize,
}

impl StepWindow {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn clip(self, horizon: usize) -> StepWindow {
        StepWindow {
            start: self.start.min(horizon),
            end: self.end.min(horizon),
        }
    }

    pub fn contains(&self, step: usize) -> bool {
        (self.start..=self.end).contains(&step)
    }
}

/// Active interval of 0-based `chunk`: `[i·T/l, (i+l)·T/l]` in the 0-based
/// form of the 1-based `[(i-1)T/l, (i+l-1)T/l]`.
///
/// Fractional boundaries round toward the interior. The interval is not
/// clipped; use [`StepWindow::clip`] against the sequence horizon.
pub fn chunk_window(chunk: usize, total_steps: usize, window: usize) -> Result<StepWindow> {
    if total_steps == 0 || window == 0 {
        return Err(Error::invalid("total_steps and window must be >= 1"));
    }
    if window > total_steps {
        return Err(Error::invalid(format!(
            "window {window} exceeds total_steps {total_steps}"
        )));
    }
    let start = (chunk * total_steps).div_ceil(window);
    let end = ((chunk + window) * total_steps) / window;
    Ok(StepWindow { start, end })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_chunk_spans_full_schedule() {
        assert_eq!(chunk_window(0, 50, 5).unwrap(), StepWindow { start: 0, end: 50 });
    }

    #[test]
    fn second_chunk_clips_at_sequence_end() {
        let w = chunk_window(1, 50, 5).unwrap();
        assert_eq!(w, StepWindow { start: 10, end: 60 });
        assert_eq!(w.clip(50), StepWindow { start: 10, end: 50 });
    }

    #[test]
    fn unit_window_is_sequential() {
        for i in 0..4 {
            let w = chunk_window(i, 50, 1).unwrap();
            assert_eq!(w, StepWindow { start: i * 50, end: (i + 1) * 50 });
        }
    }

    #[test]
    fn window_larger_than_steps_rejected() {
        assert!(chunk_window(0, 4, 5).is_err());
        assert!(NoiseSchedule::new(4, 5).is_err());
    }

    #[test]
    fn fractional_bounds_round_inward() {
        // T/l = 50/3: chunk 1 spans [16.67, 66.67] -> [17, 66]
        assert_eq!(chunk_window(1, 50, 3).unwrap(), StepWindow { start: 17, end: 66 });
    }

    #[test]
    fn sigma_endpoints() {
        let s = NoiseSchedule::new(50, 1).unwrap();
        assert_eq!(s.sigma(0), 0.0);
        assert_eq!(s.sigma(50), 1.0);
        assert!((0..50).all(|t| s.sigma(t) < s.sigma(t + 1)));
    }

    #[test]
    fn horizon_covers_last_chunk() {
        let s = NoiseSchedule::new(50, 5).unwrap();
        assert_eq!(s.horizon(3).unwrap(), 20 + 50);
        assert_eq!(NoiseSchedule::new(20, 1).unwrap().horizon(2).unwrap(), 40);
    }

    proptest! {
        #[test]
        fn consecutive_windows_overlap_by_l_minus_one_strides(
            i in 0usize..20, l in 1usize..10, stride in 1usize..10,
        ) {
            let t = l * stride;
            let a = chunk_window(i, t, l).unwrap();
            let b = chunk_window(i + 1, t, l).unwrap();
            prop_assert_eq!(a.end - b.start, (l - 1) * t / l);
        }
    }
}
