//! Normalized discounted cumulative gain with graded relevance.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::field::scenario::{rng_for, stream};

/// Token order by descending score, ties by ascending index.
pub fn rank_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

fn dcg(order: &[usize], relevance: &[f64], depth: usize) -> f64 {
    order
        .iter()
        .take(depth)
        .enumerate()
        .map(|(r, &p)| relevance[p] / ((r + 2) as f64).log2())
        .sum()
}

/// NDCG of the ranking induced by `proxy` against graded `oracle` relevance,
/// truncated at `k` when given. All-zero relevance scores 1.
pub fn ndcg(proxy: &[f64], oracle: &[f64], k: Option<usize>) -> Result<f64> {
    if proxy.len() != oracle.len() {
        return Err(Error::invalid(format!(
            "proxy has {} scores, oracle has {}",
            proxy.len(),
            oracle.len()
        )));
    }
    if proxy.is_empty() {
        return Err(Error::invalid("ndcg needs at least one token"));
    }
    if let Some(bad) = oracle.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::invalid(format!("oracle relevance must be finite and >= 0, got {bad}")));
    }
    if proxy.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("proxy scores contain NaN"));
    }
    let depth = k.unwrap_or(proxy.len()).min(proxy.len());
    if depth == 0 {
        return Err(Error::invalid("ndcg depth must be >= 1"));
    }
    let ideal = dcg(&rank_desc(oracle), oracle, depth);
    if ideal == 0.0 {
        return Ok(1.0);
    }
    Ok(dcg(&rank_desc(proxy), oracle, depth) / ideal)
}

/// Mean NDCG of `draws` uniformly random rankings.
pub fn random_ndcg(oracle: &[f64], k: Option<usize>, draws: usize, seed: u64, index: u64) -> Result<f64> {
    if draws == 0 {
        return Err(Error::invalid("need at least one random draw"));
    }
    let mut rng = rng_for(seed, stream::PERMUTATION, index);
    let mut perm: Vec<usize> = (0..oracle.len()).collect();
    let mut total = 0.0;
    for _ in 0..draws {
        perm.shuffle(&mut rng);
        // Scores that rank tokens in permutation order.
        let mut scores = vec![0.0; oracle.len()];
        for (r, &p) in perm.iter().enumerate() {
            scores[p] = -(r as f64);
        }
        total += ndcg(&scores, oracle, k)?;
    }
    Ok(total / draws as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ideal_ranking_is_one() {
        let o = [0.3, 2.0, 0.0, 1.1];
        assert_eq!(ndcg(&o, &o, None).unwrap(), 1.0);
        assert_eq!(ndcg(&[5.0], &[2.0], None).unwrap(), 1.0);
        assert_eq!(ndcg(&[1.0, 2.0], &[0.0, 0.0], None).unwrap(), 1.0);
    }

    #[test]
    fn reversed_three_tokens() {
        let oracle = [3.0, 2.0, 1.0];
        let got = ndcg(&[1.0, 2.0, 3.0], &oracle, None).unwrap();
        // Hand-expanded gains with a log2(rank + 1) discount.
        let l3 = 3f64.ln() / 2f64.ln();
        let dcg = 1.0 + 2.0 / l3 + 3.0 / 2.0;
        let idcg = 3.0 + 2.0 / l3 + 1.0 / 2.0;
        assert!((got - dcg / idcg).abs() < 1e-15);
        assert!((got - 0.790).abs() < 5e-4);
    }

    #[test]
    fn ties_break_by_index() {
        assert_eq!(rank_desc(&[1.0, 3.0, 1.0, 3.0]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn truncation() {
        let oracle = [0.0, 0.0, 5.0];
        assert_eq!(ndcg(&[3.0, 2.0, 1.0], &oracle, Some(2)).unwrap(), 0.0);
        assert_eq!(ndcg(&[1.0, 2.0, 3.0], &oracle, Some(1)).unwrap(), 1.0);
    }

    #[test]
    fn input_errors() {
        assert!(ndcg(&[], &[], None).is_err());
        assert!(ndcg(&[1.0], &[1.0, 2.0], None).is_err());
        assert!(ndcg(&[1.0], &[-1.0], None).is_err());
    }

    #[test]
    fn random_baseline_is_deterministic_and_bounded() {
        let oracle: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64).collect();
        let a = random_ndcg(&oracle, None, 100, 9, 0).unwrap();
        assert_eq!(a, random_ndcg(&oracle, None, 100, 9, 0).unwrap());
        assert!(a > 0.0 && a < 1.0);
    }
}

pub use trace_report::{ndcg_report, NdcgOptions, ProxyKind, RankingReport, RankingStep};

mod trace_report {
    use serde::{Deserialize, Serialize};

    use super::{ndcg, random_ndcg};
    use crate::analysis::residual_differences;
    use crate::error::{Error, Result};
    use crate::policy::importance_map;
    use crate::trace::{RunTrace, SnapshotKind, Verbosity};

    #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
    #[serde(rename_all = "kebab-case")]
    pub enum ProxyKind {
        /// Frame-difference importance of the previous-step latent.
        FrameDifference,
        /// The oracle itself; every step scores exactly 1.
        Oracle,
    }

    #[derive(Debug, Clone, PartialEq)]
    pub struct NdcgOptions {
        pub k: Option<usize>,
        pub proxy: ProxyKind,
        pub random_draws: usize,
        pub seed: u64,
    }

    impl Default for NdcgOptions {
        fn default() -> Self {
            NdcgOptions {
                k: None,
                proxy: ProxyKind::FrameDifference,
                random_draws: 100,
                seed: 0,
            }
        }
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct RankingStep {
        pub chunk: u32,
        pub t: u32,
        pub ndcg: f64,
        pub random_ndcg: f64,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct RankingReport {
        pub steps: Vec<RankingStep>,
        pub mean_ndcg: f64,
        pub mean_random_ndcg: f64,
    }

    /// Per step `t` of every chunk, ranks tokens by the proxy computed on
    /// `X_{t+1}` and scores against `‖R_t − R_{t+1}‖₂`.
    ///
    /// Needs a trace at `residuals` verbosity in which both steps computed all tokens.
    pub fn ndcg_report(trace: &RunTrace, opts: &NdcgOptions) -> Result<RankingReport> {
        trace.require_verbosity(Verbosity::Residuals)?;
        let latents = trace.snapshot_map(SnapshotKind::InputLatent);
        let frames = trace.header.shape.frames;
        let mut steps = Vec::new();
        for d in residual_differences(trace)? {
            let (chunk, t) = (d.chunk, d.t);
            let proxy = match opts.proxy {
                ProxyKind::Oracle => d.norms.clone(),
                ProxyKind::FrameDifference => {
                    let x = latents
                        .get(&(chunk, t + 1))
                        .ok_or_else(|| Error::state(format!("missing latent of chunk {chunk} at t = {}", t + 1)))?
                        .to_tensor()?;
                    let reference = if chunk > 0 {
                        let prev = latents.get(&(chunk - 1, t + 1)).ok_or_else(|| {
                            Error::state(format!("missing latent of chunk {} at t = {}", chunk - 1, t + 1))
                        })?;
                        let pt = prev.to_tensor()?;
                        Some(pt.frame(frames - 1).to_vec())
                    } else {
                        None
                    };
                    importance_map(&x, reference.as_deref(), chunk as usize)?
                }
            };
            let index = ((chunk as u64) << 20) | t as u64;
            steps.push(RankingStep {
                chunk,
                t,
                ndcg: ndcg(&proxy, &d.norms, opts.k)?,
                random_ndcg: random_ndcg(&d.norms, opts.k, opts.random_draws, opts.seed, index)?,
            });
        }
        if steps.is_empty() {
            return Err(Error::InsufficientData("no step pairs with full residuals".into()));
        }
        let n = steps.len() as f64;
        Ok(RankingReport {
            mean_ndcg: steps.iter().map(|s| s.ndcg).sum::<f64>() / n,
            mean_random_ndcg: steps.iter().map(|s| s.random_ndcg).sum::<f64>() / n,
            steps,
        })
    }
}
