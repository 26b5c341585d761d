//! Checks and statistics computed from run traces.

pub mod distribution;
pub mod flops;
pub mod lemma;
pub mod ndcg;
pub mod prop1;
pub mod quality;
pub mod replay;
pub mod stats;

pub use distribution::{residual_differences, residual_distribution, DistributionStats, ResidualDiff, Summary};
pub use flops::{flops_account, record_flops, step_flops, FlopsLedger, FlopsModel, StepFlops};
pub use lemma::{lemma_check, lemma_report, lemma_samples, LemmaReport, LemmaSample};
pub use ndcg::{ndcg, ndcg_report, random_ndcg, NdcgOptions, ProxyKind, RankingReport};
pub use prop1::{error_samples, prop1_check, ErrorReport, ErrorSample};
pub use quality::{data_range, mse, psnr, quality_metrics, ssim, video_quality, QualityMetrics};
pub use replay::{crossings_by_tau, gate_sequences, GateSequence};
