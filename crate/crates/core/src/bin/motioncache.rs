use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use motioncache::analysis::ProxyKind;
use motioncache::experiment::{
    export_importance_frames, prepare, run_experiment, sweep, verify, write_experiment, write_sweep_csv, ExperimentConfig,
    MaskMode, RunFilter, StepRange, SweepParam, VerifyKind, VerifyOptions,
};
use motioncache::policy::PolicyKind;
use motioncache::trace::{read_trace, TraceRecord, Verbosity};
use motioncache::Error;

#[derive(Parser)]
#[command(name = "motioncache", version, about = "Token-level residual caching for chunked flow-matching denoising")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config's.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run only policies of this kind (vanilla, step-level, chunk-level, motioncache).
    #[arg(long)]
    policy: Option<String>,
    /// Trace verbosity: decisions, latents or residuals.
    #[arg(long)]
    verbosity: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Check {
    Prop1,
    Lemma,
    Ndcg,
    SparseDense,
}

#[derive(Clone, Copy, ValueEnum)]
enum Proxy {
    FrameDifference,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum Masks {
    Random,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured policy and write traces plus summary.json.
    Run(Common),
    /// Vary one parameter of the caching policy and write a CSV table.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// alpha, k or tau.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Run a check and exit with status 3 if it fails.
    Verify {
        #[arg(value_enum)]
        check: Check,
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "frame-difference")]
        proxy: Proxy,
        #[arg(long, value_enum, default_value = "random")]
        mask: Masks,
    },
    /// Write importance-map PNGs from a trace recorded at latents verbosity or above.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: PathBuf,
        /// First global step to export.
        #[arg(long)]
        from: Option<u64>,
        /// Last global step to export.
        #[arg(long)]
        to: Option<u64>,
    },
    /// Print a trace's header and step records.
    Inspect {
        trace: PathBuf,
        /// Print at most this many step records.
        #[arg(long)]
        limit: Option<usize>,
    },
}

fn load(common: &Common) -> motioncache::Result<(ExperimentConfig, RunFilter)> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(v) = &common.verbosity {
        cfg.verbosity = Verbosity::parse(v).map_err(|e| config_err("--verbosity", e))?;
    }
    let policy = common
        .policy
        .as_deref()
        .map(PolicyKind::parse)
        .transpose()
        .map_err(|e| config_err("--policy", e))?;
    Ok((cfg, RunFilter { seed: common.seed, policy }))
}

fn config_err(flag: &str, e: Error) -> Error {
    Error::Config {
        path: flag.to_string(),
        message: e.to_string(),
    }
}

enum Outcome {
    Done,
    Failed,
}

fn execute(cli: Cli) -> motioncache::Result<Outcome> {
    match cli.command {
        Command::Run(common) => {
            let (cfg, filter) = load(&common)?;
            let results = run_experiment(&cfg, &filter)?;
            let summary = write_experiment(&cfg, &results, &cfg.output_dir)?;
            println!("{}", cfg.output_dir.join("summary.json").display());
            for r in &summary.runs {
                println!(
                    "seed {:>3} {:<14} token forwards {:>8} ({:.3})",
                    r.seed, r.policy, r.token_forwards, r.active_token_ratio
                );
            }
            for q in &summary.quality {
                println!("seed {:>3} {:<14} mse {:.3e} ssim {:.4} speedup {:.2}x", q.seed, q.policy, q.mse, q.ssim, q.speedup);
            }
            Ok(Outcome::Done)
        }
        Command::Sweep { common, param, values } => {
            let (cfg, filter) = load(&common)?;
            let param = SweepParam::parse(&param).map_err(|e| config_err("--param", e))?;
            let rows = sweep(&cfg, param, &values, &filter)?;
            let name = format!("sweep_{}.csv", serde_json::to_value(param).expect("enum").as_str().unwrap_or("param"));
            let path = cfg.output_dir.join(name);
            write_sweep_csv(&rows, &path)?;
            println!("{}", path.display());
            Ok(Outcome::Done)
        }
        Command::Verify { check, common, proxy, mask } => {
            let (cfg, filter) = load(&common)?;
            let kind = match check {
                Check::Prop1 => VerifyKind::Prop1,
                Check::Lemma => VerifyKind::Lemma,
                Check::Ndcg => VerifyKind::Ndcg,
                Check::SparseDense => VerifyKind::SparseDense,
            };
            let opts = VerifyOptions {
                proxy: match proxy {
                    Proxy::FrameDifference => ProxyKind::FrameDifference,
                    Proxy::Oracle => ProxyKind::Oracle,
                },
                masks: match mask {
                    Masks::Random => MaskMode::Random,
                    Masks::All => MaskMode::All,
                },
                ..Default::default()
            };
            let report = verify(&cfg, kind, &opts, &filter)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            println!("{}", if report.passed { "PASS" } else { "FAIL" });
            Ok(if report.passed { Outcome::Done } else { Outcome::Failed })
        }
        Command::Export { common, trace, from, to } => {
            let (cfg, _) = load(&common)?;
            let t = read_trace(&trace)?;
            if !t.header.config_hash.is_empty() && t.header.config_hash != cfg.hash() {
                log::warn!("trace was produced by a different config ({})", t.header.config_hash);
            }
            let (scenario, _) = prepare(&cfg, t.header.seed)?;
            let dir = cfg.output_dir.join("frames");
            let files = export_importance_frames(&t, &scenario, &dir, StepRange { from, to })?;
            println!("{} images in {}", files.len(), dir.display());
            Ok(Outcome::Done)
        }
        Command::Inspect { trace, limit } => {
            let t = read_trace(&trace)?;
            println!("{}", serde_json::to_string_pretty(&t.header).expect("header serializes"));
            let mut snapshots = 0usize;
            let mut shown = 0usize;
            println!("{:>6} {:>5} {:>4} {:>4} {:<13} {:<8} {:>10} {:>7}", "step", "chunk", "t", "win", "mode", "phase", "delta", "active");
            for r in &t.records {
                match r {
                    TraceRecord::Step(s) => {
                        if limit.is_some_and(|l| shown >= l) {
                            continue;
                        }
                        shown += 1;
                        let delta = s.delta.map_or("-".to_string(), |d| format!("{d:.4e}"));
                        println!(
                            "{:>6} {:>5} {:>4} {:>4} {:<13} {:<8} {:>10} {:>7}",
                            s.global_step,
                            s.chunk,
                            s.t,
                            s.step_in_window,
                            format!("{:?}", s.mode),
                            s.phase.label(),
                            delta,
                            s.active_count
                        );
                    }
                    TraceRecord::Snapshot(_) => snapshots += 1,
                }
            }
            println!("{} step records, {snapshots} snapshots, {} token forwards", t.steps().count(), t.token_forwards());
            Ok(Outcome::Done)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config { .. } | Error::InvalidArgument(_) => 2,
                Error::Io(_) | Error::Format(_) => 4,
                _ => 1,
            })
        }
    }
}
