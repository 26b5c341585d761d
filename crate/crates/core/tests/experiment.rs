use motioncache::analysis::flops_account;
use motioncache::experiment::{
    build_summary, export_importance_frames, prepare, run_experiment, run_policy, sweep, trace_path, verify, weight_localization,
    write_experiment, write_sweep_csv, ExperimentConfig, MaskMode, RunFilter, StepRange, SweepParam, VerifyKind, VerifyOptions,
};
use motioncache::policy::{Phase, PolicyConfig, PolicyKind};
use motioncache::trace::{read_trace, SnapshotKind, Verbosity};
use motioncache::Error;

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.height = 8;
    cfg.scenario.width = 8;
    cfg.scenario.frames_per_chunk = 3;
    cfg.scenario.blob_start = [3.0, 2.0];
    cfg.scenario.blob_velocity = [0.3, 0.6];
    cfg.schedule = motioncache::model::NoiseSchedule::new(14, 2).unwrap();
    cfg
}

fn row<'a>(rows: &'a [motioncache::experiment::SweepRow], value: &str) -> &'a motioncache::experiment::SweepRow {
    rows.iter().find(|r| r.value == value).unwrap_or_else(|| panic!("no row {value}"))
}

#[test]
fn alpha_sweep_at_one_reproduces_chunk_level() {
    let cfg = small();
    let rows = sweep(&cfg, SweepParam::Alpha, &[1.0, 0.5, 0.0], &RunFilter::default()).unwrap();
    let values: Vec<&str> = rows.iter().map(|r| r.value.as_str()).collect();
    assert_eq!(values, ["vanilla", "chunk-level", "1", "0.5", "0"]);
    assert_eq!(row(&rows, "1").output_digest, row(&rows, "chunk-level").output_digest);
    assert_eq!(row(&rows, "1").token_forwards, row(&rows, "chunk-level").token_forwards);
    assert_eq!(row(&rows, "vanilla").mse, 0.0);
    assert!(row(&rows, "vanilla").psnr.is_infinite());
}

#[test]
fn k_sweep_at_horizon_reproduces_chunk_level() {
    let cfg = small();
    let t = cfg.schedule.total_steps as f64;
    let rows = sweep(&cfg, SweepParam::K, &[t, t + 5.0, 2.0], &RunFilter::default()).unwrap();
    let cl = &row(&rows, "chunk-level").output_digest;
    assert_eq!(&rows[2].output_digest, cl);
    assert_eq!(&rows[3].output_digest, cl);
    assert!(sweep(&cfg, SweepParam::K, &[1.5], &RunFilter::default()).is_err());
}

#[test]
fn sweep_rejects_bad_requests() {
    let cfg = small();
    assert!(sweep(&cfg, SweepParam::Tau, &[], &RunFilter::default()).is_err());
    let mut only_cl = cfg.clone();
    only_cl.policies = vec![PolicyConfig::new(PolicyKind::ChunkLevel)];
    assert!(sweep(&only_cl, SweepParam::Alpha, &[0.5], &RunFilter::default()).is_err());
    assert!(sweep(&only_cl, SweepParam::Tau, &[0.05], &RunFilter::default()).is_ok());
    assert!(sweep(&cfg, SweepParam::Alpha, &[1.5], &RunFilter::default()).is_err());
}

#[test]
fn sweep_csv_has_one_line_per_row() {
    let cfg = small();
    let rows = sweep(&cfg, SweepParam::Tau, &[0.05, 0.4], &RunFilter::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/sweep.csv");
    write_sweep_csv(&rows, &path).unwrap();
    let mut reader = csv::Reader::from_path(&path).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert!(headers.iter().any(|h| h == "token_forwards"));
    assert_eq!(reader.records().count(), rows.len());
}

#[test]
fn summary_matches_ledger_and_is_deterministic() {
    let mut cfg = small();
    cfg.seeds = vec![3, 5];
    let a = run_experiment(&cfg, &RunFilter::default()).unwrap();
    let b = run_experiment(&cfg, &RunFilter::default()).unwrap();
    let (sa, sb) = (build_summary(&cfg, &a).unwrap(), build_summary(&cfg, &b).unwrap());
    assert_eq!(sa.to_json(), sb.to_json());
    assert_eq!(sa.runs.len(), 8);
    assert_eq!(sa.quality.len(), 6);
    let model = cfg.flops_model();
    for (r, run) in sa.runs.iter().zip(a.iter().flat_map(|s| &s.runs)) {
        assert_eq!(r.flops, flops_account(&run.output.trace, &model).total);
        assert_eq!(r.full_steps + r.skip_steps + r.sparse_steps, run.output.trace.steps().count() as u64);
    }
    for q in &sa.quality {
        assert!(q.speedup >= 1.0 && q.flops_ratio <= 1.0);
    }

    // Without vanilla there is nothing to compare against.
    let filter = RunFilter {
        seed: Some(3),
        policy: Some(PolicyKind::ChunkLevel),
    };
    let only = run_experiment(&cfg, &filter).unwrap();
    let s = build_summary(&cfg, &only).unwrap();
    assert_eq!(s.runs.len(), 1);
    assert!(s.quality.is_empty());
}

#[test]
fn written_traces_carry_the_config_hash() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let results = run_experiment(&cfg, &RunFilter::default()).unwrap();
    write_experiment(&cfg, &results, dir.path()).unwrap();
    let t = read_trace(&trace_path(dir.path(), 0, "motioncache")).unwrap();
    assert_eq!(t.header.config_hash, cfg.hash());
    assert_eq!(t, results[0].runs[3].output.trace);
}

#[test]
fn export_labels_phases_and_needs_latents() {
    let mut cfg = small();
    let (scenario, field) = prepare(&cfg, 0).unwrap();
    let p = PolicyConfig::new(PolicyKind::MotionCache);
    let low = run_policy(&cfg, &p, 0, &scenario, field.as_ref()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let err = export_importance_frames(&low.trace, &scenario, dir.path(), StepRange::default()).unwrap_err();
    assert!(matches!(err, Error::State(_)), "{err}");

    cfg.verbosity = Verbosity::Latents;
    let out = run_policy(&cfg, &p, 0, &scenario, field.as_ref()).unwrap();
    let files = export_importance_frames(&out.trace, &scenario, dir.path(), StepRange::default()).unwrap();
    let maps = out.trace.snapshots_of(SnapshotKind::Weight).count();
    assert_eq!(files.len(), maps * cfg.scenario.frames_per_chunk);
    let names: Vec<String> = files.iter().map(|f| f.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert!(names.iter().any(|n| n.ends_with("_phase2.png")));
    assert!(names.iter().any(|n| n.ends_with("_phase1.png") || n.ends_with("_warmup.png")));
    let img = image::open(&files[0]).unwrap();
    assert_eq!(img.height(), 8 * 8);

    let range = StepRange { from: Some(5), to: Some(6) };
    let some = export_importance_frames(&out.trace, &scenario, &dir.path().join("r"), range).unwrap();
    assert!(!some.is_empty() && some.len() < files.len());

    let loc = weight_localization(&out.trace, &scenario).unwrap();
    assert!(loc.iter().filter(|l| l.phase == Phase::Phase2).all(|l| l.gap() > 0.0));
}

#[test]
fn verify_checks_pass_on_defaults() {
    let cfg = small();
    let opts = VerifyOptions::default();
    for kind in [VerifyKind::Prop1, VerifyKind::SparseDense] {
        let r = verify(&cfg, kind, &opts, &RunFilter::default()).unwrap();
        assert!(r.passed, "{kind:?}: {r:?}");
    }
    let all = VerifyOptions {
        masks: MaskMode::All,
        ..opts.clone()
    };
    assert!(verify(&cfg, VerifyKind::SparseDense, &all, &RunFilter::default()).unwrap().passed);
    let oracle = VerifyOptions {
        proxy: motioncache::analysis::ProxyKind::Oracle,
        ..opts
    };
    assert!(verify(&cfg, VerifyKind::Ndcg, &oracle, &RunFilter::default()).unwrap().passed);
}

#[test]
fn verify_kinds_parse() {
    for (s, k) in [
        ("prop1", VerifyKind::Prop1),
        ("lemma", VerifyKind::Lemma),
        ("ndcg", VerifyKind::Ndcg),
        ("sparse-dense", VerifyKind::SparseDense),
    ] {
        assert_eq!(VerifyKind::parse(s).unwrap(), k);
    }
    assert!(VerifyKind::parse("everything").is_err());
}
